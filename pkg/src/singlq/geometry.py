"""Geometric control subspaces for a quadruple (A, B, C, D).

With y = Cx + Du viewed as a fictitious output whose squared norm is the
cost integrand, three classical subspaces govern the singular problem:

* the largest output-nulling subspace (states from which some input keeps
  y identically zero),
* the smallest input-containing subspace (state motions consistent with
  zero output once distributional inputs are allowed),
* their intersection, the reachability output-nulling subspace.

These are computed by the standard fixed-point recursions, each stationary
within n steps.  The module also provides the reachable subspace, the
finiteness test "output-nulling + reachable + stable = whole space" (the
cost can be made finite from every initial state iff that sum is full),
and the reachable subspace of the deflected pair (A0, BG).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .matlib import (
    DEFAULT_TOL,
    SUBSPACE_EQ_TOL,
    MarginalSpectrumWarning,
    Subspace,
    Tolerances,
    as_matrix,
    has_marginal_modes,
    orthonormal_image,
    orthonormal_kernel,
    stable_invariant_subspace,
    subspace_intersection,
    subspace_preimage,
    subspace_sum,
)
from .model import DeflectedSystem, InputSplit, PopovFactorization, Problem

__all__ = [
    "Quadruple",
    "GeometricSummary",
    "vstar",
    "sstar",
    "rstar",
    "reachable",
    "reach_deflected",
    "finiteness_test",
    "geometric_summary",
]


@dataclass(frozen=True)
class Quadruple:
    """State, input, output and feedthrough maps of dimension-compatible sizes."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        C = as_matrix(self.C, "C")
        D = as_matrix(self.D, "D")
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n:
            raise ValueError("A must be square and B must have matching rows")
        if C.shape[1] != n or D.shape != (C.shape[0], B.shape[1]):
            raise ValueError("C, D dimensions do not match (A, B)")
        for name, M in (("A", A), ("B", B), ("C", C), ("D", D)):
            object.__setattr__(self, name, M)

    @classmethod
    def from_problem(cls, P: Problem, fact: PopovFactorization) -> "Quadruple":
        return cls(A=P.A, B=P.B, C=fact.C, D=fact.D)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class GeometricSummary:
    """All subspaces and flags the analysis needs, computed once."""

    vstar: Subspace
    sstar: Subspace
    rstar: Subspace
    reachable: Subspace
    xstab: Subspace
    finiteness: bool
    sstar_eq_rstar: bool
    fragile: bool


def _embed_top(V: Subspace, extra_rows: int) -> Subspace:
    """V x {0}: pad each basis vector with zero output coordinates."""
    basis = np.vstack([V.basis, np.zeros((extra_rows, V.dim))])
    return Subspace(V.ambient_dim + extra_rows, basis)


def vstar(q: Quadruple, tol: Tolerances = DEFAULT_TOL) -> Subspace:
    """Largest output-nulling subspace of the quadruple.

    Fixed point of V <- {x : [A; C] x in (V x {0}) + im [B; D]}, started
    from the whole state space.  Dimensions are nonincreasing and the
    recursion is stationary within n steps.
    """
    n, p = q.n, q.p
    stacked = np.vstack([q.A, q.C])
    bd_image = orthonormal_image(np.vstack([q.B, q.D]), tol)
    V = Subspace.full(n)
    for _ in range(n + 1):
        W = subspace_sum(_embed_top(V, p), bd_image, tol)
        V_next = subspace_preimage(stacked, W, tol)
        # Exact arithmetic nests the iterates; intersecting guards against
        # rank jitter re-inflating the subspace.
        V_next = subspace_intersection(V_next, V, tol)
        if V_next.dim == V.dim:
            return V_next
        V = V_next
    return V


def sstar(q: Quadruple, tol: Tolerances = DEFAULT_TOL) -> Subspace:
    """Smallest input-containing subspace of the quadruple.

    Fixed point of S <- [A B] ((S x R^m) n ker [C D]), started from the
    zero subspace; dimensions are nondecreasing and stationary within n
    steps.
    """
    n, m = q.n, q.m
    ab = np.hstack([q.A, q.B])
    ab_scale = max(1.0, float(np.linalg.norm(ab, 2)))
    ker_cd = orthonormal_kernel(np.hstack([q.C, q.D]), tol)
    S = Subspace.zero(n)
    for _ in range(n + 1):
        ext_basis = np.block([
            [S.basis, np.zeros((n, m))],
            [np.zeros((m, S.dim)), np.eye(m)],
        ])
        ext = Subspace(n + m, ext_basis)
        meet = subspace_intersection(ext, ker_cd, tol)
        S_next = (
            orthonormal_image(ab @ meet.basis, tol, scale=ab_scale)
            if meet.dim
            else Subspace.zero(n)
        )
        S_next = subspace_sum(S_next, S, tol)
        if S_next.dim == S.dim:
            return S_next
        S = S_next
    return S


def rstar(q: Quadruple, tol: Tolerances = DEFAULT_TOL) -> Subspace:
    """Reachability output-nulling subspace: the intersection of the two."""
    return subspace_intersection(vstar(q, tol), sstar(q, tol), tol)


def reachable(A, B, tol: Tolerances = DEFAULT_TOL) -> Subspace:
    """Smallest A-invariant subspace containing im B.

    Krylov sweep im [B, AB, ..., A^(n-1) B], re-orthonormalized at every
    power to keep the rank decisions well conditioned.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n:
        raise ValueError("A must be square and B must have matching rows")
    a_scale = max(1.0, float(np.linalg.norm(A, 2))) if A.size else 1.0
    R = orthonormal_image(B, tol)
    for _ in range(max(n - 1, 0)):
        grown = subspace_sum(R, orthonormal_image(A @ R.basis, tol, scale=a_scale), tol)
        if grown.dim == R.dim:
            return grown
        R = grown
    return R


def reach_deflected(
    P: Problem, split: InputSplit, defl: DeflectedSystem, tol: Tolerances = DEFAULT_TOL
) -> Subspace:
    """Reachable subspace of the deflected pair (A0, B G).

    BG spans the input directions that are free of charge; the subspace it
    reaches under the deflected dynamics is exactly where distributional
    controls could act, and must lie in ker X for any constrained solution.
    """
    return reachable(defl.A0, P.B @ split.G, tol)


def finiteness_test(P: Problem, q: Quadruple, tol: Tolerances = DEFAULT_TOL) -> bool:
    """Can the cost be made finite from every initial state?

    True iff the output-nulling subspace, the reachable subspace and the
    stable invariant subspace of A together span the whole state space.
    (Reachable + stable already equals the stabilizable subspace, so the
    full stable subspace of A can stand in for its uncontrollable part.)
    Emits MarginalSpectrumWarning when eigenvalues of A sit on the axis
    within rank_tol, where the verdict is fragile.
    """
    vs = vstar(q, tol)
    rch = reachable(P.A, P.B, tol)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MarginalSpectrumWarning)
        xs = stable_invariant_subspace(P.A, tol)
    if has_marginal_modes(P.A, tol):
        warnings.warn(
            "finiteness verdict is fragile: eigenvalues of A within rank_tol "
            "of the imaginary axis",
            MarginalSpectrumWarning,
            stacklevel=2,
        )
    total = subspace_sum(subspace_sum(vs, rch, tol), xs, tol)
    return total.dim == P.n


def geometric_summary(
    P: Problem, fact: PopovFactorization, tol: Tolerances = DEFAULT_TOL
) -> GeometricSummary:
    """Compute every subspace once and bundle the derived flags."""
    q = Quadruple.from_problem(P, fact)
    vs = vstar(q, tol)
    ss = sstar(q, tol)
    rs = subspace_intersection(vs, ss, tol)
    rch = reachable(P.A, P.B, tol)
    fragile = has_marginal_modes(P.A, tol)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MarginalSpectrumWarning)
        xs = stable_invariant_subspace(P.A, tol)
    total = subspace_sum(subspace_sum(vs, rch, tol), xs, tol)
    return GeometricSummary(
        vstar=vs,
        sstar=ss,
        rstar=rs,
        reachable=rch,
        xstab=xs,
        finiteness=total.dim == P.n,
        sstar_eq_rstar=ss.same_as(rs, SUBSPACE_EQ_TOL),
        fragile=fragile,
    )
