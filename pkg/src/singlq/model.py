"""Problem data for the singular linear-quadratic setting.

A problem is the quintuple (A, B, Q, S, R) with the joint cost weight

    Pi = [[Q, S], [S', R]]  symmetric positive semidefinite,

where R may be singular (the singular/cheap cases).  This module validates
that data, factorizes Pi = [C D]'[C D], splits the input space along
im R / ker R, forms the deflected data after the preliminary feedback
u = -pinv(R) S' x, and evaluates the bundle of matrices associated with a
symmetric candidate solution X.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matlib import (
    DEFAULT_TOL,
    Tolerances,
    as_matrix,
    pseudo_inverse,
    symmetrize,
)

__all__ = [
    "Problem",
    "PopovFactorization",
    "InputSplit",
    "AssociatedData",
    "DeflectedSystem",
    "ProblemError",
    "validate_problem",
    "factor_popov",
    "input_split",
    "associated",
    "deflected",
]

# Relative asymmetry in Q or R above this is a modeling error, below it is
# silently repaired as serialization round-off.
ASYMMETRY_ERROR = 1e-6


class ProblemError(ValueError):
    """Input data violates the standing assumptions."""


def _freeze(M: np.ndarray) -> np.ndarray:
    M = np.array(M, dtype=float)
    M.flags.writeable = False
    return M


@dataclass(frozen=True)
class Problem:
    """Validated problem data; immutable, safe to share across threads."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray
    n: int
    m: int

    def popov(self) -> np.ndarray:
        """The joint cost weight [[Q, S], [S', R]]."""
        top = np.hstack([self.Q, self.S])
        bot = np.hstack([self.S.T, self.R])
        return np.vstack([top, bot])

    def r_pinv(self) -> np.ndarray:
        return pseudo_inverse(self.R)

    def kernel_projector(self) -> np.ndarray:
        """Orthogonal projector onto ker R: G = I - pinv(R) R."""
        return symmetrize(np.eye(self.m) - self.r_pinv() @ self.R)


@dataclass(frozen=True)
class PopovFactorization:
    """Full-row-rank factor [C D] of the cost weight: Pi = [C D]'[C D]."""

    C: np.ndarray
    D: np.ndarray
    p: int


@dataclass(frozen=True)
class InputSplit:
    """Orthonormal input-space split along im R (T1) and ker R (T2).

    B1 = B T1, B2 = B T2, D1 = D T1; G is the orthogonal projector onto
    ker R; r = rank R.  In the T basis the input weight is block-diagonal
    with an invertible leading r x r block.
    """

    T1: np.ndarray
    T2: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    D1: np.ndarray
    G: np.ndarray
    r: int


@dataclass(frozen=True)
class AssociatedData:
    """The X-dependent bundle for a symmetric candidate X.

    QX = Q + A'X + XA, SX = S + XB, KX = pinv(R) SX', AX = A - B KX and
    PiX reassembles [[QX, SX], [SX', R]].
    """

    QX: np.ndarray
    SX: np.ndarray
    KX: np.ndarray
    AX: np.ndarray
    PiX: np.ndarray


@dataclass(frozen=True)
class DeflectedSystem:
    """Data after the preliminary feedback u = -pinv(R) S' x.

    A0 = A - B pinv(R) S', Q0 = Q - S pinv(R) S' (a generalized Schur
    complement, hence PSD), and C0 = C - D pinv(R) S' with C0'C0 = Q0.
    """

    A0: np.ndarray
    Q0: np.ndarray
    C0: np.ndarray


def _symmetric_part(M: np.ndarray, name: str) -> np.ndarray:
    scale = max(1.0, float(np.linalg.norm(M)))
    if np.linalg.norm(M - M.T) > ASYMMETRY_ERROR * scale:
        raise ProblemError(f"{name} is not symmetric (relative asymmetry above {ASYMMETRY_ERROR:g})")
    return symmetrize(M)


def validate_problem(A, B, Q, S, R, tol: Tolerances = DEFAULT_TOL) -> Problem:
    """Check dimensions and the positivity of the joint cost weight.

    Q and R are symmetrized before the checks; the assembled Pi must have
    minimum eigenvalue >= -psd_tol, and the cost must not weight input
    directions that are free of charge (ker R inside ker S), which for
    exact PSD data is automatic.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    Q = as_matrix(Q, "Q")
    S = as_matrix(S, "S")
    R = as_matrix(R, "R")
    n = A.shape[0]
    if A.shape != (n, n):
        raise ProblemError(f"A must be square, got {A.shape}")
    if B.shape[0] != n:
        raise ProblemError(f"B has {B.shape[0]} rows, expected {n}")
    m = B.shape[1]
    if Q.shape != (n, n):
        raise ProblemError(f"Q must be {n}x{n}, got {Q.shape}")
    if S.shape != (n, m):
        raise ProblemError(f"S must be {n}x{m}, got {S.shape}")
    if R.shape != (m, m):
        raise ProblemError(f"R must be {m}x{m}, got {R.shape}")

    Q = _symmetric_part(Q, "Q")
    R = _symmetric_part(R, "R")

    prob = Problem(
        A=_freeze(A), B=_freeze(B), Q=_freeze(Q), S=_freeze(S), R=_freeze(R), n=n, m=m
    )
    Pi = prob.popov()
    if Pi.size:
        lam_min = float(np.linalg.eigvalsh(Pi)[0])
        if lam_min < -tol.psd_tol:
            raise ProblemError(f"Popov matrix indefinite: lambda_min = {lam_min:.6g}")
    # ker R inside ker S, tested through the projector onto ker R.  The
    # sqrt scaling matches how far S can leak given lambda_min >= -psd_tol.
    leak = float(np.linalg.norm(S @ prob.kernel_projector()))
    if leak > np.sqrt(tol.psd_tol) * (1.0 + float(np.linalg.norm(Pi))):
        raise ProblemError(
            f"cross weight S acts on unweighted input directions (|S G| = {leak:.3g})"
        )
    return prob


def factor_popov(P: Problem, tol: Tolerances = DEFAULT_TOL) -> PopovFactorization:
    """Factor the cost weight as Pi = [C D]'[C D] with [C D] of full row rank.

    The factor is canonicalized through the eigendecomposition of Pi with
    eigenvalues in descending order: row i of [C D] is sqrt(lam_i) v_i'.
    p equals the numerical rank of Pi, so [C D] never carries dead rows.
    """
    Pi = P.popov()
    if Pi.size == 0:
        return PopovFactorization(
            C=_freeze(np.zeros((0, P.n))), D=_freeze(np.zeros((0, P.m))), p=0
        )
    lam, vecs = np.linalg.eigh(Pi)
    lam = lam[::-1]
    vecs = vecs[:, ::-1]
    lam_max = max(float(lam[0]), 0.0)
    keep = lam > tol.rank_tol * lam_max if lam_max > 0.0 else np.zeros(lam.shape, bool)
    p = int(np.sum(keep))
    rows = (np.sqrt(lam[keep])[:, None] * vecs[:, keep].T) if p else np.zeros((0, P.n + P.m))
    C, D = rows[:, : P.n], rows[:, P.n :]
    recon = rows.T @ rows
    if np.linalg.norm(recon - Pi) > tol.residual_tol * (1.0 + np.linalg.norm(Pi)):
        raise ProblemError("cost weight factorization failed the reconstruction check")
    return PopovFactorization(C=_freeze(C), D=_freeze(D), p=p)


def input_split(
    P: Problem, fact: PopovFactorization, tol: Tolerances = DEFAULT_TOL
) -> InputSplit:
    """Split the input space into weighted (im R) and free (ker R) parts.

    T1 and T2 are orthonormal bases of im R and ker R from the
    eigendecomposition of R, so T = [T1 | T2] is orthogonal.  D T2 = 0
    because (D T2)'(D T2) = T2' R T2 = 0.
    """
    lam, vecs = np.linalg.eigh(P.R)
    lam = lam[::-1]
    vecs = vecs[:, ::-1]
    lam_max = max(float(lam[0]), 0.0) if lam.size else 0.0
    keep = lam > tol.rank_tol * lam_max if lam_max > 0.0 else np.zeros(lam.shape, bool)
    r = int(np.sum(keep))
    T1, T2 = vecs[:, :r], vecs[:, r:]
    G = P.kernel_projector()
    B1, B2 = P.B @ T1, P.B @ T2
    D1 = fact.D @ T1
    dker = float(np.linalg.norm(fact.D @ T2))
    if dker > tol.residual_tol * (1.0 + float(np.linalg.norm(fact.D))):
        raise ProblemError(f"factor D does not vanish on ker R (|D T2| = {dker:.3g})")
    return InputSplit(
        T1=_freeze(T1), T2=_freeze(T2), B1=_freeze(B1), B2=_freeze(B2),
        D1=_freeze(D1), G=_freeze(G), r=r,
    )


def associated(X, P: Problem) -> AssociatedData:
    """Evaluate the bundle (QX, SX, KX, AX, PiX) at a symmetric X."""
    X = as_matrix(X, "X")
    if X.shape != (P.n, P.n):
        raise ValueError(f"X must be {P.n}x{P.n}, got {X.shape}")
    if np.linalg.norm(X - X.T) > 1e-8 * (1.0 + np.linalg.norm(X)):
        raise ValueError("X is not symmetric")
    X = symmetrize(X)
    QX = symmetrize(P.Q + P.A.T @ X + X @ P.A)
    SX = P.S + X @ P.B
    KX = P.r_pinv() @ SX.T
    AX = P.A - P.B @ KX
    PiX = np.vstack([np.hstack([QX, SX]), np.hstack([SX.T, P.R])])
    return AssociatedData(
        QX=_freeze(QX), SX=_freeze(SX), KX=_freeze(KX), AX=_freeze(AX), PiX=_freeze(PiX)
    )


def deflected(
    P: Problem, fact: PopovFactorization, tol: Tolerances = DEFAULT_TOL
) -> DeflectedSystem:
    """Data after the preliminary feedback u = -pinv(R) S' x."""
    Rp = P.r_pinv()
    A0 = P.A - P.B @ Rp @ P.S.T
    Q0 = symmetrize(P.Q - P.S @ Rp @ P.S.T)
    C0 = fact.C - fact.D @ Rp @ P.S.T
    if Q0.size:
        lam_min = float(np.linalg.eigvalsh(Q0)[0])
        if lam_min < -tol.psd_tol:
            raise ProblemError(
                f"deflected state weight lost positivity (lambda_min = {lam_min:.3g}); "
                "this should be impossible for validated data"
            )
    if np.linalg.norm(C0.T @ C0 - Q0) > tol.residual_tol * (1.0 + np.linalg.norm(Q0)) * 10:
        raise ProblemError("deflected factor does not reproduce the deflected weight")
    return DeflectedSystem(A0=_freeze(A0), Q0=_freeze(Q0), C0=_freeze(C0))
