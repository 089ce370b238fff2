"""Dense real-matrix primitives and subspace arithmetic.

Everything downstream (cost validation, Riccati flows, geometric subspace
recursions) is built on the small set of operations in this module:
rank-revealing image/kernel bases, the subspace lattice (sum, intersection,
preimage), stable invariant subspaces via an ordered real Schur form, a
Lyapunov solver and the matrix exponential.

Matrices are plain ``numpy.ndarray`` of float64.  Subspaces are always
carried as orthonormal bases; comparisons are projection-residual based so
they never depend on a particular basis choice.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, schur, solve_continuous_lyapunov

__all__ = [
    "Tolerances",
    "Subspace",
    "NotHurwitz",
    "MarginalSpectrumWarning",
    "as_matrix",
    "symmetrize",
    "spectral_abscissa",
    "has_marginal_modes",
    "pseudo_inverse",
    "orthonormal_image",
    "orthonormal_kernel",
    "subspace_sum",
    "subspace_intersection",
    "subspace_preimage",
    "stable_invariant_subspace",
    "lyapunov_solve",
    "matrix_exponential",
]


@dataclass(frozen=True)
class Tolerances:
    """Numerical policy knobs shared across the package.

    rank_tol is a relative singular-value cutoff (scale invariant),
    residual_tol bounds matrix-equation residuals, psd_tol is the slack
    allowed below zero for minimum eigenvalues of nominally PSD matrices.
    """

    rank_tol: float = 1e-9
    residual_tol: float = 1e-7
    psd_tol: float = 1e-8

    def __post_init__(self) -> None:
        for name in ("rank_tol", "residual_tol", "psd_tol"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")


DEFAULT_TOL = Tolerances()

#: Projection residual below which two subspaces count as equal / contained.
SUBSPACE_EQ_TOL = 1e-8


class NotHurwitz(ValueError):
    """Raised when an operation requires a strictly stable matrix."""


class MarginalSpectrumWarning(UserWarning):
    """Eigenvalues too close to the imaginary axis for a robust verdict."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float array (copies only when needed)."""
    M = np.asarray(a, dtype=float)
    if M.ndim == 1:
        M = M.reshape(-1, 1)
    if M.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {M.shape}")
    if M.size and not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def spectral_abscissa(A: np.ndarray) -> float:
    """Largest real part over the spectrum (-inf for the 0x0 matrix)."""
    if A.shape[0] == 0:
        return -np.inf
    return float(np.max(np.linalg.eigvals(A).real))


def has_marginal_modes(A: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> bool:
    """True when some eigenvalue has |Re| within rank_tol of zero."""
    if A.shape[0] == 0:
        return False
    return bool(np.any(np.abs(np.linalg.eigvals(A).real) <= tol.rank_tol))


class Subspace:
    """A linear subspace of R^n stored as an orthonormal basis matrix.

    The basis has shape (ambient_dim, dim); dim may be zero.  Equality is
    mutual containment, decided through projection residuals, so two
    Subspaces built from different bases of the same space compare equal.
    """

    __slots__ = ("ambient_dim", "basis")

    def __init__(self, ambient_dim: int, basis: np.ndarray):
        basis = np.asarray(basis, dtype=float)
        if basis.ndim != 2 or basis.shape[0] != ambient_dim:
            raise ValueError(
                f"basis shape {basis.shape} does not match ambient dim {ambient_dim}"
            )
        if basis.shape[1] > ambient_dim:
            raise ValueError("basis has more columns than the ambient dimension")
        if basis.shape[1]:
            gram = basis.T @ basis
            if not np.allclose(gram, np.eye(basis.shape[1]), atol=1e-10):
                raise ValueError("basis columns are not orthonormal")
        basis = basis.copy()
        basis.flags.writeable = False
        object.__setattr__(self, "ambient_dim", int(ambient_dim))
        object.__setattr__(self, "basis", basis)

    def __setattr__(self, name, value):  # immutability guard
        raise AttributeError("Subspace is immutable")

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def zero(cls, ambient_dim: int) -> "Subspace":
        return cls(ambient_dim, np.zeros((ambient_dim, 0)))

    @classmethod
    def full(cls, ambient_dim: int) -> "Subspace":
        return cls(ambient_dim, np.eye(ambient_dim))

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def residual_of(self, vectors: np.ndarray) -> float:
        """Largest column norm of the component outside this subspace."""
        V = np.asarray(vectors, dtype=float)
        if V.ndim == 1:
            V = V.reshape(-1, 1)
        if V.shape[1] == 0:
            return 0.0
        resid = V - self.basis @ (self.basis.T @ V)
        return float(np.max(np.linalg.norm(resid, axis=0)))

    def contains(self, other: "Subspace", tol: float = SUBSPACE_EQ_TOL) -> bool:
        if self.ambient_dim != other.ambient_dim:
            raise ValueError("ambient dimensions differ")
        return self.residual_of(other.basis) <= tol

    def same_as(self, other: "Subspace", tol: float = SUBSPACE_EQ_TOL) -> bool:
        return self.contains(other, tol) and other.contains(self, tol)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Subspace):
            return NotImplemented
        if self.ambient_dim != other.ambient_dim:
            return False
        return self.same_as(other)

    def __hash__(self):
        return hash((self.ambient_dim, self.dim))

    def __repr__(self) -> str:
        return f"Subspace(dim={self.dim}, ambient={self.ambient_dim})"


def pseudo_inverse(M: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse with a relative singular-value cutoff."""
    M = as_matrix(M)
    if M.size == 0:
        return np.zeros((M.shape[1], M.shape[0]))
    return np.linalg.pinv(M, rcond=tol.rank_tol)


def _svd_bases(M: np.ndarray, tol: Tolerances, scale: float = 0.0):
    """SVD split of M into (left image basis, right kernel basis, rank).

    scale anchors the cutoff absolutely: singular values at or below
    rank_tol * max(sigma_max, scale) count as zero.  Without the anchor a
    matrix that is pure cancellation noise (all entries ~1e-16) would look
    full rank, since every noise singular value is large relative to the
    largest noise singular value.
    """
    if M.size == 0:
        return (
            np.zeros((M.shape[0], 0)),
            np.eye(M.shape[1]),
            0,
        )
    U, s, Vt = np.linalg.svd(M, full_matrices=True)
    cutoff = tol.rank_tol * max(s[0] if s.size else 0.0, scale)
    rank = int(np.sum(s > cutoff))
    return U[:, :rank], Vt[rank:].T, rank


def orthonormal_image(
    M: np.ndarray, tol: Tolerances = DEFAULT_TOL, scale: float = 0.0
) -> Subspace:
    """Column span of M as a Subspace of R^rows."""
    M = as_matrix(M)
    img, _, _ = _svd_bases(M, tol, scale)
    return Subspace(M.shape[0], img)


def orthonormal_kernel(
    M: np.ndarray, tol: Tolerances = DEFAULT_TOL, scale: float = 0.0
) -> Subspace:
    """Null space of M as a Subspace of R^cols."""
    M = as_matrix(M)
    _, ker, _ = _svd_bases(M, tol, scale)
    return Subspace(M.shape[1], ker)


def subspace_sum(U: Subspace, W: Subspace, tol: Tolerances = DEFAULT_TOL) -> Subspace:
    """Smallest subspace containing both U and W."""
    if U.ambient_dim != W.ambient_dim:
        raise ValueError("ambient dimensions differ")
    stacked = np.hstack([U.basis, W.basis])
    if stacked.shape[1] == 0:
        return Subspace.zero(U.ambient_dim)
    return orthonormal_image(stacked, tol, scale=1.0)


def subspace_intersection(
    U: Subspace, W: Subspace, tol: Tolerances = DEFAULT_TOL
) -> Subspace:
    """Largest subspace contained in both U and W.

    x lies in the intersection iff both complementary projections vanish,
    so the intersection is the kernel of the stacked complement projectors.
    The projectors are O(1) by construction, which fixes the rank scale.
    """
    if U.ambient_dim != W.ambient_dim:
        raise ValueError("ambient dimensions differ")
    n = U.ambient_dim
    stack = np.vstack([np.eye(n) - U.projector(), np.eye(n) - W.projector()])
    return orthonormal_kernel(stack, tol, scale=1.0)


def subspace_preimage(
    M: np.ndarray, W: Subspace, tol: Tolerances = DEFAULT_TOL
) -> Subspace:
    """{x : M x in W}, the inverse image of W under M."""
    M = as_matrix(M)
    if W.ambient_dim != M.shape[0]:
        raise ValueError(
            f"subspace lives in R^{W.ambient_dim} but M maps into R^{M.shape[0]}"
        )
    # Mx in W  <=>  (I - P_W) M x = 0.  Residuals below rank_tol relative
    # to the magnitude of M itself count as zero.
    comp = (np.eye(W.ambient_dim) - W.projector()) @ M
    m_scale = float(np.linalg.norm(M, 2)) if M.size else 0.0
    return orthonormal_kernel(comp, tol, scale=max(1.0, m_scale))


def stable_invariant_subspace(
    A: np.ndarray, tol: Tolerances = DEFAULT_TOL
) -> Subspace:
    """Invariant subspace for the eigenvalues of A with Re < 0.

    Computed from an ordered real Schur decomposition.  Eigenvalues with
    |Re| <= rank_tol sit too close to the imaginary axis to classify; they
    are excluded and a MarginalSpectrumWarning is emitted.
    """
    A = as_matrix(A)
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError("A must be square")
    if n == 0:
        return Subspace.zero(0)
    if has_marginal_modes(A, tol):
        warnings.warn(
            "eigenvalues within rank_tol of the imaginary axis were excluded "
            "from the stable invariant subspace",
            MarginalSpectrumWarning,
            stacklevel=2,
        )
    _, Z, sdim = schur(A, output="real", sort=lambda re, im: re < -tol.rank_tol)
    return Subspace(n, Z[:, :sdim])


def lyapunov_solve(
    F: np.ndarray, W: np.ndarray, tol: Tolerances = DEFAULT_TOL
) -> np.ndarray:
    """Unique symmetric P with F'P + PF + W = 0 for Hurwitz F.

    Solved by Schur reduction and back-substitution; refuses non-Hurwitz F
    because the integral Gramian interpretation breaks down there.
    """
    F = as_matrix(F, "F")
    W = as_matrix(W, "W")
    if F.shape[0] != F.shape[1] or F.shape != W.shape:
        raise ValueError("F and W must be square of the same size")
    if not np.allclose(W, W.T, atol=1e-10 * (1.0 + np.linalg.norm(W))):
        raise ValueError("W must be symmetric")
    alpha = spectral_abscissa(F)
    if not alpha < 0.0:
        raise NotHurwitz(f"F is not Hurwitz: spectral abscissa = {alpha:.6e}")
    W = symmetrize(W)
    P = symmetrize(solve_continuous_lyapunov(F.T, -W))
    resid = np.linalg.norm(F.T @ P + P @ F + W)
    bound = tol.residual_tol * (1.0 + np.linalg.norm(W))
    if resid > bound:
        raise ValueError(
            f"Lyapunov residual {resid:.3e} exceeds bound {bound:.3e}; "
            f"F is too close to the imaginary axis (abscissa {alpha:.3e})"
        )
    return P


def matrix_exponential(M: np.ndarray) -> np.ndarray:
    """exp(M) by scaling-and-squaring with a Pade approximant."""
    M = as_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise ValueError("M must be square")
    return expm(M)
