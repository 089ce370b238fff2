"""Existence analysis and synthesis of regular optimal controls.

Four equivalent statements decide whether a singular LQ problem admits an
impulse-free optimal control:

  (a) every initial state admits a regular optimal control;
  (b) the constrained Riccati equation has a PSD solution;
  (c) it has a symmetric solution and the cost can be made finite from
      every initial state;
  (d) the smallest input-containing and the reachability output-nulling
      subspaces coincide, and the cost can be made finite.

(b) is checked constructively by integrating the Riccati flow; (d) is
checked by direct subspace computation.  The two routes are independent,
so agreement between them is a nontrivial internal consistency check that
the report carries explicitly.  When (b) holds the module synthesizes the
optimal feedback u = -K x + G v, simulates the closed loop and verifies
the achieved cost against the predicted x0' X x0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .matlib import (
    DEFAULT_TOL,
    MarginalSpectrumWarning,
    Tolerances,
    matrix_exponential,
    symmetrize,
)
from .model import PopovFactorization, Problem, associated, factor_popov
from .riccati import (
    RdeOptions,
    RdeOutcome,
    RdeStatus,
    _dp54,
    cgcare_check,
    integrate_rde,
)
from .geometry import GeometricSummary, geometric_summary

__all__ = [
    "TriState",
    "ConditionVerdicts",
    "Synthesis",
    "Trajectory",
    "CostCheck",
    "check_condition_b",
    "check_condition_d",
    "analyze",
    "synthesize",
    "simulate",
    "verify_optimal_cost",
]

SIM_RTOL = 1e-10
SIM_ATOL = 1e-12


class TriState(str, Enum):
    HOLDS = "holds"
    FAILS = "fails"
    UNDECIDED = "undecided"


@dataclass
class ConditionVerdicts:
    """Verdicts for the four equivalent conditions plus diagnostics.

    a: a regular optimal control exists for every initial state.
    b: the constrained Riccati equation has a PSD solution.
    c: a symmetric solution exists and the cost can be made finite.
    d: input-containing and reachability subspaces coincide, and the cost
       can be made finite.
    consistency_ok is False iff two decided verdicts contradict the
    equivalence of the four statements.
    """

    a: TriState
    b: TriState
    c: TriState
    d: TriState
    finiteness: TriState
    sstar_eq_rstar: bool
    consistency_ok: bool
    notes: list[str] = field(default_factory=list)
    X_bar: np.ndarray | None = None
    rde: RdeOutcome | None = None
    geometry: GeometricSummary | None = None

    def decided(self) -> dict[str, TriState]:
        all_four = {"a": self.a, "b": self.b, "c": self.c, "d": self.d}
        return {k: v for k, v in all_four.items() if v is not TriState.UNDECIDED}

    @property
    def any_undecided(self) -> bool:
        return TriState.UNDECIDED in (self.a, self.b, self.c, self.d)


@dataclass(frozen=True)
class Synthesis:
    """Optimal regular feedback u = -K x + G v with arbitrary v.

    X_bar is the minimal PSD solution and the optimal cost matrix; A_K the
    closed-loop state matrix; G projects onto the unweighted input
    directions, parameterizing the whole family of optimal controls.
    """

    X_bar: np.ndarray
    K: np.ndarray
    A_K: np.ndarray
    G: np.ndarray

    @property
    def optimal_cost_matrix(self) -> np.ndarray:
        return self.X_bar


@dataclass
class Trajectory:
    """Closed-loop samples and the running cost up to each sample time."""

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    running_cost: np.ndarray
    max_flow_deviation: float | None = None
    notes: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class CostCheck:
    """Achieved-versus-predicted optimal cost comparison.

    decided is False when the cost integrand had not decayed below the
    tail threshold by the end of the verification horizon.
    """

    relative_error: float
    decided: bool
    cost: float
    predicted: float
    horizon: float


def check_condition_b(
    P: Problem, opts: RdeOptions = RdeOptions(), tol: Tolerances = DEFAULT_TOL
) -> tuple[TriState, np.ndarray | None, RdeOutcome]:
    """Constructive check: run the Riccati flow and test its limit."""
    outcome = integrate_rde(P, opts, tol)
    if outcome.status is RdeStatus.CONVERGED:
        if outcome.cgcare is not None and outcome.cgcare.is_solution:
            return TriState.HOLDS, outcome.X_limit, outcome
        return TriState.UNDECIDED, None, outcome
    if outcome.status is RdeStatus.DIVERGED:
        return TriState.FAILS, None, outcome
    return TriState.UNDECIDED, None, outcome


def check_condition_d(
    P: Problem, fact: PopovFactorization, tol: Tolerances = DEFAULT_TOL
) -> tuple[TriState, GeometricSummary]:
    """Geometric check: subspace coincidence plus the finiteness test."""
    geo = geometric_summary(P, fact, tol)
    verdict = TriState.HOLDS if (geo.sstar_eq_rstar and geo.finiteness) else TriState.FAILS
    return verdict, geo


def analyze(
    P: Problem, opts: RdeOptions = RdeOptions(), tol: Tolerances = DEFAULT_TOL
) -> ConditionVerdicts:
    """Evaluate all four conditions and cross-check their agreement.

    (b) and (d) are evaluated independently; (c) follows from (b) and the
    finiteness verdict through the equivalence, and (a) is certified
    constructively in the positive case (the synthesized feedback is the
    regular optimal control) or through the equivalence in the negative
    one.  Undecided numerics are never coerced into a boolean.
    """
    notes: list[str] = []
    fact = factor_popov(P, tol)

    b, X_bar, rde = check_condition_b(P, opts, tol)
    if rde.notes:
        notes.extend(f"flow: {s}" for s in rde.notes)
    if b is TriState.UNDECIDED and rde.status is RdeStatus.CONVERGED:
        notes.append(
            "flow converged but its limit failed the constrained-equation check"
        )

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MarginalSpectrumWarning)
        d, geo = check_condition_d(P, fact, tol)
    if geo.fragile:
        notes.append(
            "fragile: eigenvalues of A within rank_tol of the imaginary axis"
        )
    finiteness = TriState.HOLDS if geo.finiteness else TriState.FAILS

    if b is TriState.HOLDS:
        c = TriState.HOLDS
    elif b is TriState.FAILS or finiteness is TriState.FAILS:
        c = TriState.FAILS
    else:
        c = TriState.UNDECIDED
    notes.append(
        "condition (c) is certified through the equivalence with (b) and the "
        "finiteness test; no independent search over indefinite symmetric "
        "solutions is attempted"
    )

    if b is TriState.HOLDS:
        a = TriState.HOLDS
    elif TriState.FAILS in (b, c, d):
        a = TriState.FAILS
    else:
        a = TriState.UNDECIDED

    decided = [v for v in (a, b, c, d) if v is not TriState.UNDECIDED]
    consistency_ok = not (TriState.HOLDS in decided and TriState.FAILS in decided)

    return ConditionVerdicts(
        a=a,
        b=b,
        c=c,
        d=d,
        finiteness=finiteness,
        sstar_eq_rstar=geo.sstar_eq_rstar,
        consistency_ok=consistency_ok,
        notes=notes,
        X_bar=X_bar,
        rde=rde,
        geometry=geo,
    )


def synthesize(P: Problem, X_bar, tol: Tolerances = DEFAULT_TOL) -> Synthesis:
    """Build the optimal feedback from a verified solution X_bar."""
    verdict = cgcare_check(X_bar, P, tol)
    if not verdict.is_solution:
        raise ValueError(
            "X_bar does not solve the constrained equation "
            f"(residual {verdict.residual_norm:.3e}, constraint {verdict.constraint_norm:.3e})"
        )
    data = associated(X_bar, P)
    return Synthesis(
        X_bar=symmetrize(np.asarray(X_bar, dtype=float)),
        K=data.KX,
        A_K=data.AX,
        G=P.kernel_projector(),
    )


def _as_state(x0, n: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (n,):
        raise ValueError(f"x0 must have {n} entries, got {x0.shape}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 contains non-finite entries")
    return x0


def simulate(
    P: Problem,
    syn: Synthesis,
    x0,
    v=None,
    T: float = 20.0,
    dt: float = 0.01,
) -> Trajectory:
    """Integrate the closed loop and accumulate the running cost.

    The state obeys dx/dt = A_K x + B G v(t) with u = -K x + G v; v = None
    means v identically zero.  The running cost is the composite Simpson
    quadrature of [x; u]' Pi [x; u] on the fixed sample grid (midpoints
    included), so it is exact for the smooth decaying integrands at hand
    and nondecreasing by construction.  With v = None the state is also
    propagated through the matrix exponential and the largest relative
    deviation is recorded.
    """
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    x0 = _as_state(x0, P.n)
    steps = max(1, int(round(T / dt)))
    dt_eff = T / steps
    times = dt_eff * np.arange(steps + 1)
    times[-1] = T
    half_times = dt_eff / 2.0 * np.arange(2 * steps + 1)
    half_times[-1] = T

    if v is None:
        v_fun = None
    else:
        probe = np.asarray(v(0.0), dtype=float).reshape(-1)
        if probe.shape != (P.m,):
            raise ValueError(f"v(t) must return {P.m} entries, got {probe.shape}")
        v_fun = v

    B, K, G, AK = P.B, syn.K, syn.G, syn.A_K
    BG = B @ G

    if v_fun is None:
        def rhs(t, x):
            return AK @ x
    else:
        def rhs(t, x):
            return AK @ x + BG @ np.asarray(v_fun(t), dtype=float).reshape(-1)

    _, _, samples, status, dp_notes = _dp54(
        rhs,
        x0,
        T,
        rtol=SIM_RTOL,
        atol=SIM_ATOL,
        h0=dt_eff / 2.0,
        h_max=dt_eff / 2.0,
        sample_times=tuple(half_times[1:]),
    )
    if status is not None:
        raise ArithmeticError(f"closed-loop integration failed: {status} {dp_notes}")
    xs_half = np.vstack([x0] + [s[1] for s in samples])
    if xs_half.shape[0] != 2 * steps + 1:
        raise ArithmeticError(
            f"integrator missed sample times ({xs_half.shape[0] - 1} of {2 * steps})"
        )

    def input_at(t, x):
        u = -K @ x
        if v_fun is not None:
            u = u + G @ np.asarray(v_fun(t), dtype=float).reshape(-1)
        return u

    Pi = P.popov()
    us_half = np.vstack([input_at(t, x) for t, x in zip(half_times, xs_half)])
    z = np.hstack([xs_half, us_half])
    integrand = np.einsum("ij,jk,ik->i", z, Pi, z)
    integrand = np.maximum(integrand, 0.0)  # kill roundoff below zero

    running = np.zeros(steps + 1)
    seg = dt_eff / 6.0 * (integrand[0:-2:2] + 4.0 * integrand[1:-1:2] + integrand[2::2])
    running[1:] = np.cumsum(seg)

    states = xs_half[::2]
    inputs = us_half[::2]

    max_dev = None
    notes: list[str] = list(dp_notes)
    if v_fun is None:
        E = matrix_exponential(AK * dt_eff)
        x_ref = x0.copy()
        max_dev = 0.0
        for k in range(1, steps + 1):
            x_ref = E @ x_ref
            dev = float(
                np.linalg.norm(states[k] - x_ref) / (1.0 + np.linalg.norm(x_ref))
            )
            max_dev = max(max_dev, dev)

    return Trajectory(
        times=times,
        states=states,
        inputs=inputs,
        running_cost=running,
        max_flow_deviation=max_dev,
        notes=notes,
    )


def _verification_horizon(A_K: np.ndarray) -> float:
    eigs = np.linalg.eigvals(A_K)
    decaying = eigs.real[eigs.real < 0]
    if decaying.size == 0:
        return 20.0
    slowest = float(np.max(decaying))
    return float(min(max(20.0, 40.0 / abs(slowest)), 1e4))


def verify_optimal_cost(
    P: Problem,
    syn: Synthesis,
    x0,
    T: float | None = None,
) -> CostCheck:
    """Compare the simulated closed-loop cost with x0' X_bar x0.

    The horizon defaults to 40 time constants of the slowest decaying
    closed-loop mode (at least 20, at most 1e4).  The check is undecided
    when the cost integrand has not dropped below 1e-10 (relative to the
    predicted cost) by the end of the horizon; decay is judged on the
    integrand, which watches the penalized output, not the state norm.
    """
    x0 = _as_state(x0, P.n)
    predicted = float(x0 @ syn.X_bar @ x0)
    horizon = float(T) if T is not None else _verification_horizon(syn.A_K)
    if not horizon > 0:
        raise ValueError("verification horizon must be positive")
    dt = horizon / 2048.0
    traj = simulate(P, syn, x0, None, horizon, dt)
    cost = float(traj.running_cost[-1])

    zT = np.concatenate([traj.states[-1], traj.inputs[-1]])
    tail = float(zT @ P.popov() @ zT)
    decided = tail <= 1e-10 * (1.0 + predicted)
    relative_error = abs(cost - predicted) / (1.0 + predicted)
    return CostCheck(
        relative_error=relative_error,
        decided=decided,
        cost=cost,
        predicted=predicted,
        horizon=horizon,
    )
