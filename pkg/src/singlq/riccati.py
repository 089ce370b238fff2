"""Riccati machinery for possibly-singular input weights.

The central object is the matrix flow

    dX/dt = X A + A'X - (S + X B) pinv(R) (S' + B'X) + Q,   X(0) = 0,

whose value X(t) is the optimal cost matrix of the horizon-t problem.  The
flow is monotonically nondecreasing in the PSD order; it either converges
to the minimal PSD solution of the constrained algebraic equation or grows
without bound.  This module integrates the flow with an embedded
Dormand-Prince 5(4) pair, classifies the outcome (converged / diverged /
horizon exhausted), evaluates finite-horizon values, solves the regular
reduced equation obtained by restricting inputs to im R, and cross-checks
converged solutions against the closed-loop observability Gramian.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .matlib import (
    DEFAULT_TOL,
    Tolerances,
    as_matrix,
    lyapunov_solve,
    spectral_abscissa,
    symmetrize,
)
from .model import (
    InputSplit,
    PopovFactorization,
    Problem,
    associated,
    validate_problem,
)

__all__ = [
    "RdeOptions",
    "RdeStatus",
    "RdeOutcome",
    "CgcareVerdict",
    "NotApplicable",
    "gcare_residual",
    "cgcare_check",
    "integrate_rde",
    "finite_horizon_value",
    "regular_reduction_care",
    "closed_loop_gramian",
]


class NotApplicable(Exception):
    """The requested computation is undefined for this data."""


class RdeStatus(str, Enum):
    CONVERGED = "converged"
    DIVERGED = "diverged"
    HORIZON_EXHAUSTED = "horizon_exhausted"


@dataclass(frozen=True)
class RdeOptions:
    """Integration policy for the Riccati flow.

    step is the initial trial step; the controller adapts it from there.
    conv_tol bounds the derivative norm that counts as stationary;
    div_bound is an absolute trace blow-up threshold (None = scale it from
    the problem).  rtol/atol drive the embedded error controller; the
    default is absolute-dominated so per-step wobble stays far below the
    monotonicity slack of the flow even for large states.
    """

    step: float = 1e-3
    max_time: float = 500.0
    conv_tol: float = 1e-9
    div_bound: float | None = None
    rtol: float = 1e-14
    atol: float = 1e-12

    def __post_init__(self) -> None:
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not self.max_time > 0:
            raise ValueError("max_time must be positive")
        if not self.conv_tol > 0:
            raise ValueError("conv_tol must be positive")
        if self.div_bound is not None and not self.div_bound > 0:
            raise ValueError("div_bound must be positive")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")


@dataclass
class CgcareVerdict:
    """Outcome of testing a candidate X against the constrained equation."""

    is_solution: bool
    residual_norm: float
    constraint_norm: float
    constraint_norm_xb: float


@dataclass
class RdeOutcome:
    """Result of integrating the Riccati flow from zero.

    trajectory_samples holds (t, trace X(t)) pairs, matrix_samples a
    decimated list of (t, X(t)) for property checks; both are diagnostics.
    cgcare is filled when the flow converged.
    """

    status: RdeStatus
    X_limit: np.ndarray | None
    trajectory_samples: list[tuple[float, float]]
    matrix_samples: list[tuple[float, np.ndarray]]
    final_time: float
    cgcare: CgcareVerdict | None = None
    notes: tuple[str, ...] = ()


def gcare_residual(X, P: Problem) -> np.ndarray:
    """X A + A'X - (S + XB) pinv(R) (S' + B'X) + Q, symmetrized."""
    X = symmetrize(as_matrix(X, "X"))
    SX = P.S + X @ P.B
    H = X @ P.A
    return symmetrize(H + H.T - SX @ (P.r_pinv() @ SX.T) + P.Q)


def cgcare_check(X, P: Problem, tol: Tolerances = DEFAULT_TOL) -> CgcareVerdict:
    """Test the equation residual and the kernel constraint at X.

    The constraint ker R inside ker(S + XB) is evaluated through the
    orthogonal projector G onto ker R; the equivalent form ker R inside
    ker(XB) is reported alongside as a cross-check.
    """
    X = symmetrize(as_matrix(X, "X"))
    G = P.kernel_projector()
    residual_norm = float(np.linalg.norm(gcare_residual(X, P)))
    constraint_norm = float(np.linalg.norm((P.S + X @ P.B) @ G))
    constraint_norm_xb = float(np.linalg.norm(X @ P.B @ G))
    res_ok = residual_norm <= tol.residual_tol * (1.0 + float(np.linalg.norm(P.popov())))
    con_ok = constraint_norm <= tol.residual_tol * (1.0 + float(np.linalg.norm(X)))
    return CgcareVerdict(
        is_solution=bool(res_ok and con_ok),
        residual_norm=residual_norm,
        constraint_norm=constraint_norm,
        constraint_norm_xb=constraint_norm_xb,
    )


# ---------------------------------------------------------------------------
# Embedded Dormand-Prince 5(4) pair, shared by the matrix flow and the
# closed-loop simulator.  Works on arrays of any shape.

_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_DP_ERR = tuple(b5 - b4 for b5, b4 in zip(_DP_B5, _DP_B4))

_MAX_STEPS = 400_000


class _ErrControl:
    """Mutable error-control knobs, so a monitor can tighten them mid-run.

    Near an equilibrium the relative part of the error test allows state
    wobble of order rtol * |X| per step, which puts a floor under the
    observable derivative norm; switching to absolute-dominated control
    there lets the flow settle far enough for the convergence test.
    """

    __slots__ = ("rtol", "atol")

    def __init__(self, rtol: float, atol: float):
        self.rtol = rtol
        self.atol = atol


def _dp54(
    f,
    y0: np.ndarray,
    t_end: float,
    *,
    rtol: float,
    atol: float,
    h0: float,
    h_max: float,
    post_step=None,
    on_accept=None,
    h_cap_fn=None,
    err_control: _ErrControl | None = None,
    sample_times=(),
):
    """Integrate dy/dt = f(t, y) from t = 0 to t_end.

    post_step(y) is applied to every accepted state (symmetrization hook).
    on_accept(t, y, dy) may return a status string to stop early.
    h_cap_fn(t), when given, may return an additional step-size cap.
    err_control, when given, overrides rtol/atol and may be mutated by the
    on_accept callback between steps.  Steps are clipped so every requested
    sample time is hit exactly; the sampled states are returned as a list
    of (t, y).

    Returns (t, y, samples, stop_status, notes).
    """
    t = 0.0
    y = np.array(y0, dtype=float)
    if post_step is not None:
        y = post_step(y)
    h = min(h0, h_max, t_end) if t_end > 0 else h0
    ctrl = err_control if err_control is not None else _ErrControl(rtol, atol)
    samples: list[tuple[float, np.ndarray]] = []
    pending = sorted(s for s in sample_times if s > 0.0)
    notes: list[str] = []

    k1 = f(t, y)
    if on_accept is not None:
        status = on_accept(t, y, k1)
        if status:
            return t, y, samples, status, tuple(notes)
    if t_end <= 0.0:
        return t, y, samples, None, tuple(notes)

    ks = [None] * 7
    for _ in range(_MAX_STEPS):
        if t >= t_end:
            break
        target = pending[0] if pending else t_end
        gap = target - t
        if gap <= 1e-14 * max(1.0, abs(t)):
            # Degenerate remaining gap: snap to the target time.
            t = target
            if pending and target == pending[0]:
                samples.append((t, y.copy()))
                pending.pop(0)
            continue
        h_eff = h
        if h_cap_fn is not None:
            cap = h_cap_fn(t)
            if cap is not None and cap > 0.0:
                h_eff = min(h_eff, cap)
        h_try = min(h_eff, h_max, gap)
        if h_try < 1e-14 * max(1.0, abs(t)):
            notes.append(f"step size underflow at t = {t:.6g} (stiffness)")
            return t, y, samples, "underflow", tuple(notes)
        clipped = h_try < h

        ks[0] = k1
        rejected_underflow = False
        while True:
            for i in range(1, 7):
                acc = y + (h_try * _DP_A[i][0]) * ks[0]
                for j in range(1, i):
                    if _DP_A[i][j]:
                        acc = acc + (h_try * _DP_A[i][j]) * ks[j]
                if i < 6:
                    ks[i] = f(t + _DP_C[i] * h_try, acc)
                else:
                    y_new = acc if post_step is None else post_step(acc)
                    ks[6] = f(t + h_try, y_new)
            err_arr = np.zeros_like(y)
            for i in range(7):
                if _DP_ERR[i]:
                    err_arr = err_arr + (h_try * _DP_ERR[i]) * ks[i]
            scale = ctrl.atol + ctrl.rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = float(np.max(np.abs(err_arr) / scale)) if y.size else 0.0

            factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            if err <= 1.0:
                break
            h_try *= factor
            clipped = False
            if h_try < 1e-14 * max(1.0, abs(t)):
                rejected_underflow = True
                break
        if rejected_underflow:
            notes.append(f"step size underflow at t = {t:.6g} (stiffness)")
            return t, y, samples, "underflow", tuple(notes)

        t_new = t + h_try
        if pending and target == pending[0] and abs(t_new - target) <= 1e-12 * max(1.0, target):
            t_new = target
        t, y, k1 = t_new, y_new, ks[6]
        if not clipped:
            h = min(h_try * factor, h_max)
        if pending and t == pending[0]:
            samples.append((t, y.copy()))
            pending.pop(0)
        if on_accept is not None:
            status = on_accept(t, y, k1)
            if status:
                return t, y, samples, status, tuple(notes)
    else:
        notes.append("step budget exhausted")
        return t, y, samples, "underflow", tuple(notes)

    return t, y, samples, None, tuple(notes)


# ---------------------------------------------------------------------------
# Flow classification helpers.

_CONFIRM_STEPS = 10          # accepted steps the derivative must stay flat
_GROWTH_ARM = 0.5            # fraction of the horizon before the fit arms
_GROWTH_WINDOW = 0.25        # fit uses samples with t >= GROWTH_WINDOW * now
_GROWTH_RATIO = 0.995        # late/early slope ratio for sustained growth
_GROWTH_RESID = 1e-3         # relative misfit allowed for "linear" growth
_GROWTH_FLOOR = 1e-6         # slope floor, scaled by the problem size
_EXP_FLOOR = 1e3             # trace factor above problem scale to arm the
                             # exponential-growth detector
_EXP_RATE = 1e-2             # minimum sustained log-trace slope
_SADDLE_FACTOR = 0.1         # best residual must undercut conv_tol by this
_SADDLE_ESCAPE = 1e3         # growth factor over the best residual that
                             # counts as ejection from a stationary point
_SAMPLE_MAG_CAP = 1e3        # largest state norm still recorded as a matrix
                             # sample; above it roundoff swamps the
                             # monotonicity slack of the exact flow


def _fit_slope(ts: np.ndarray, xs: np.ndarray) -> float:
    ts = ts - ts.mean()
    denom = float(ts @ ts)
    if denom == 0.0:
        return 0.0
    return float(ts @ (xs - xs.mean())) / denom


def _sustained_growth(ts: np.ndarray, trs: np.ndarray, now: float, floor: float):
    """Detect linear-or-faster trace growth that never flattens.

    A converging flow has trace increments that decay; a flow without a
    bounded limit keeps climbing at a steady (or increasing) rate, like the
    exactly-linear growth of a frozen penalized mode.  The discriminator
    fits the trailing three quarters of the history and demands a near
    constant slope with a tiny misfit, so slowly converging flows fall
    through to an honest horizon-exhausted verdict instead.
    """
    lo = _GROWTH_WINDOW * now
    idx = np.searchsorted(ts, lo)
    tw, xw = ts[idx:], trs[idx:]
    if tw.size < 16 or tw[-1] - tw[0] < 0.45 * now:
        return None
    mid = 0.5 * (tw[0] + tw[-1])
    cut = np.searchsorted(tw, mid)
    if cut < 6 or tw.size - cut < 6:
        return None
    slope = _fit_slope(tw, xw)
    if slope < floor:
        return None
    early = _fit_slope(tw[:cut], xw[:cut])
    late = _fit_slope(tw[cut:], xw[cut:])
    if early <= 0.0:
        sustained = late >= floor
    else:
        sustained = late >= _GROWTH_RATIO * early
    if not sustained:
        return None
    fit = xw.mean() + slope * (tw - tw.mean())
    misfit = float(np.max(np.abs(xw - fit)))
    span = tw[-1] - tw[0]
    if misfit > _GROWTH_RESID * max(slope * span, floor * span):
        return None
    return slope


def _sustained_exponential(ts: np.ndarray, trs: np.ndarray, now: float, rate_floor: float):
    """Detect steady exponential trace growth (log-linear, not flattening)."""
    lo = _GROWTH_WINDOW * now
    idx = np.searchsorted(ts, lo)
    tw, xw = ts[idx:], trs[idx:]
    if tw.size < 16 or tw[-1] - tw[0] < max(20.0, 0.45 * now):
        return None
    if np.any(xw <= 0.0):
        return None
    lw = np.log(xw)
    mid = 0.5 * (tw[0] + tw[-1])
    cut = np.searchsorted(tw, mid)
    if cut < 6 or tw.size - cut < 6:
        return None
    rate = _fit_slope(tw, lw)
    if rate < rate_floor:
        return None
    early = _fit_slope(tw[:cut], lw[:cut])
    late = _fit_slope(tw[cut:], lw[cut:])
    if early <= 0.0 or late < 0.9 * early:
        return None
    fit = lw.mean() + rate * (tw - tw.mean())
    if float(np.max(np.abs(lw - fit))) > 0.05 * rate * (tw[-1] - tw[0]):
        return None
    return rate


class _FlowMonitor:
    """Accumulates samples and decides convergence / divergence.

    Beyond the derivative-norm streak and the trace blow-up bound, it
    rescues saddle passes (the flow certifiably visits a near-stationary
    point, then numerical noise ejects it along an unstable direction: the
    visited point is returned as the limit, which is sound because the
    monotone flow stays below the minimal PSD solution), flags departures
    from the PSD cone as numerical breakdown, and classifies sustained
    linear or exponential trace growth as divergence.
    """

    def __init__(
        self,
        P: Problem,
        opts: RdeOptions,
        horizon: float,
        classify: bool,
        err_control: _ErrControl | None = None,
    ):
        self.conv_tol = opts.conv_tol
        self.classify = classify
        self.horizon = horizon
        pi_norm = float(np.linalg.norm(P.popov()))
        a_norm = float(np.linalg.norm(P.A))
        self.scale0 = 1.0 + pi_norm + a_norm**2
        self.div_bound = (
            opts.div_bound if opts.div_bound is not None else 1e9 * self.scale0
        )
        self.slope_floor = _GROWTH_FLOOR * (1.0 + pi_norm)
        self.arm_time = _GROWTH_ARM * horizon
        self.h_ref = horizon / 100.0 if horizon > 0 else 1.0
        self.err_control = err_control
        self._tightened = False
        self.traces: list[tuple[float, float]] = []
        self.matrices: list[tuple[float, np.ndarray]] = []
        self._trace_stride = 1
        self._matrix_stride = 1
        self._accepts = 0
        self._streak = 0
        self._h_freeze: float | None = None
        self._prev_t = 0.0
        self._stall_count = 0
        self.best_deriv = np.inf
        self.X_best: np.ndarray | None = None
        self.t_best = 0.0
        self.growth_slope: float | None = None
        self.growth_rate: float | None = None

    def h_cap(self, t: float):
        # During the confirmation window hold the step size (larger steps
        # would raise the local-error noise floor back above conv_tol) and
        # pace the remaining steps so the window fits before the horizon.
        if not self.classify or self._streak == 0:
            return None
        cap = self._h_freeze
        remaining = self.horizon - t
        need = _CONFIRM_STEPS - self._streak + 1
        if remaining > 0.0 and need > 0:
            pace = remaining / (need + 1)
            cap = pace if cap is None else min(cap, pace)
        return cap

    def __call__(self, t: float, X: np.ndarray, dX: np.ndarray):
        self._accepts += 1
        h_step = t - self._prev_t
        self._prev_t = t
        tr = float(np.trace(X))
        if self._accepts % self._trace_stride == 0 or t == 0.0:
            self.traces.append((t, tr))
            if len(self.traces) > 4096:
                self.traces = self.traces[::2]
                self._trace_stride *= 2
        if (self._accepts % self._matrix_stride == 0 or t == 0.0) and (
            float(np.linalg.norm(X)) <= _SAMPLE_MAG_CAP
        ):
            self.matrices.append((t, X.copy()))
            if len(self.matrices) > 512:
                self.matrices = self.matrices[::2]
                self._matrix_stride *= 2

        deriv = float(np.linalg.norm(dX))
        # Entering the equilibrium endgame: tighten the error control so
        # state wobble sits well below conv_tol and cannot mask the
        # convergence test.  Applied in every mode so that truncated runs
        # retrace the same steps.
        if (
            self.err_control is not None
            and not self._tightened
            and deriv <= max(1e4 * self.conv_tol, 1e-5)
        ):
            self.err_control.rtol = min(self.err_control.rtol, 1e-15)
            self.err_control.atol = min(self.err_control.atol, 1e-4 * self.conv_tol)
            self._tightened = True
        if not self.classify:
            return None

        if deriv < self.best_deriv:
            self.best_deriv = deriv
            self.X_best = X.copy()
            self.t_best = t

        if deriv <= self.conv_tol:
            if self._streak == 0 and h_step > 0.0:
                self._h_freeze = h_step
            self._streak += 1
            if self._streak >= _CONFIRM_STEPS:
                return "converged"
        else:
            self._streak = 0
            self._h_freeze = None
            if (
                self.best_deriv <= _SADDLE_FACTOR * self.conv_tol
                and deriv >= max(_SADDLE_ESCAPE * self.best_deriv, 10.0 * self.conv_tol)
            ):
                return "converged_saddle"

        # The exact flow never leaves the PSD cone; a clearly negative
        # eigenvalue means the numerics broke down (e.g. ejection from a
        # stationary point along an indefinite unstable direction).
        if X.size:
            lam_min = float(np.linalg.eigvalsh(X)[0])
            if lam_min < -1e-6 * (1.0 + float(np.linalg.norm(X))):
                return "breakdown"

        if tr > self.div_bound:
            return "diverged_bound"
        if self._accepts % 8 == 0 and len(self.traces) >= 24:
            ts = np.array([s[0] for s in self.traces])
            xs = np.array([s[1] for s in self.traces])
            if t >= self.arm_time:
                slope = _sustained_growth(ts, xs, t, self.slope_floor)
                if slope is not None:
                    self.growth_slope = slope
                    return "diverged_linear"
            if tr >= _EXP_FLOOR * self.scale0:
                rate = _sustained_exponential(ts, xs, t, _EXP_RATE)
                if rate is not None:
                    self.growth_rate = rate
                    return "diverged_exponential"

        # Step-size collapse with a large state: explicit stepping cannot
        # make progress any more; give up honestly instead of stalling.
        if h_step < 1e-5 * self.h_ref and tr > 100.0 * self.scale0:
            self._stall_count += 1
            if self._stall_count >= 200:
                return "stalled"
        else:
            self._stall_count = 0
        return None


def _run_flow(
    P: Problem,
    horizon: float,
    opts: RdeOptions,
    *,
    classify: bool,
    sample_times=(),
):
    rhs = _make_rde_rhs(P)
    X0 = np.zeros((P.n, P.n))
    ctrl = _ErrControl(opts.rtol, opts.atol)
    monitor = _FlowMonitor(P, opts, horizon, classify, err_control=ctrl)
    t, X, samples, status, notes = _dp54(
        rhs,
        X0,
        horizon,
        rtol=opts.rtol,
        atol=opts.atol,
        h0=opts.step,
        h_max=horizon / 100.0 if horizon > 0 else opts.step,
        post_step=symmetrize,
        on_accept=monitor,
        h_cap_fn=monitor.h_cap if classify else None,
        err_control=ctrl,
        sample_times=sample_times,
    )
    return t, X, samples, status, notes, monitor


def _make_rde_rhs(P: Problem):
    A, B, Q, S = P.A, P.B, P.Q, P.S
    Rp = P.r_pinv()

    def rhs(t: float, X: np.ndarray) -> np.ndarray:
        SX = S + X @ B
        H = X @ A
        return H + H.T - SX @ (Rp @ SX.T) + Q

    return rhs


def integrate_rde(P: Problem, opts: RdeOptions = RdeOptions(), tol: Tolerances = DEFAULT_TOL) -> RdeOutcome:
    """Integrate the flow from zero and classify its long-run behaviour.

    Converged means the derivative norm stayed at or below conv_tol for
    ten consecutive accepted steps; the state at the end of that window is
    returned (the extra flat steps polish the limit).  Diverged means the
    trace crossed the blow-up bound or grew at a sustained linear-or-faster
    rate.  Anything else is horizon exhaustion, reported as undecided
    rather than coerced into a verdict.
    """
    t, X, _, status, notes, monitor = _run_flow(
        P, opts.max_time, opts, classify=True
    )
    notes = list(notes)

    if status in ("converged", "converged_saddle"):
        if status == "converged_saddle":
            X = monitor.X_best
            t = monitor.t_best
            # Samples past the ejection describe the noise-driven escape,
            # not the flow; drop them.
            monitor.traces = [s for s in monitor.traces if s[0] <= t]
            monitor.matrices = [s for s in monitor.matrices if s[0] <= t]
            notes.append(
                "flow was ejected from a stationary point by roundoff along an "
                f"unstable direction; returning the visited point (residual "
                f"{monitor.best_deriv:.3e})"
            )
        X = symmetrize(X)
        verdict = cgcare_check(X, P, tol)
        lam_min = float(np.linalg.eigvalsh(X)[0]) if X.size else 0.0
        if lam_min < -tol.psd_tol:
            notes.append(f"converged limit has negative eigenvalue {lam_min:.3e}")
        return RdeOutcome(
            status=RdeStatus.CONVERGED,
            X_limit=X,
            trajectory_samples=monitor.traces,
            matrix_samples=monitor.matrices,
            final_time=t,
            cgcare=verdict,
            notes=tuple(notes),
        )

    if status in ("diverged_bound", "diverged_linear", "diverged_exponential"):
        if status == "diverged_linear":
            notes.append(
                f"sustained trace growth at rate {monitor.growth_slope:.3g} per unit time"
            )
        elif status == "diverged_exponential":
            notes.append(
                f"sustained exponential trace growth at rate {monitor.growth_rate:.3g} "
                "per unit time"
            )
        else:
            notes.append(f"trace exceeded divergence bound {monitor.div_bound:.3g}")
        return RdeOutcome(
            status=RdeStatus.DIVERGED,
            X_limit=None,
            trajectory_samples=monitor.traces,
            matrix_samples=monitor.matrices,
            final_time=t,
            notes=tuple(notes),
        )

    if status == "breakdown":
        notes.append(
            "flow left the PSD cone (numerical breakdown near an unstable "
            "stationary point); undecided"
        )
    elif status == "stalled":
        notes.append("step size collapsed with a large state; undecided")
    elif status == "underflow":
        notes.append("integration stalled before the horizon; undecided")
    return RdeOutcome(
        status=RdeStatus.HORIZON_EXHAUSTED,
        X_limit=None,
        trajectory_samples=monitor.traces,
        matrix_samples=monitor.matrices,
        final_time=t,
        notes=tuple(notes),
    )


def finite_horizon_value(P: Problem, T: float, opts: RdeOptions = RdeOptions()) -> np.ndarray:
    """Optimal cost matrix of the horizon-T problem: X(T) of the flow.

    The optimal cost over [0, T] from x0 is x0' X(T) x0; T = 0 returns the
    zero matrix.  The same integrator as integrate_rde is used, with early
    stopping disabled so the flow always reaches T.
    """
    if T < 0:
        raise ValueError("horizon must be nonnegative")
    if T == 0.0:
        return np.zeros((P.n, P.n))
    _, _, samples, status, notes, _ = _run_flow(
        P, T, opts, classify=False, sample_times=(T,)
    )
    if status == "underflow" or not samples:
        raise ArithmeticError(f"flow integration stalled before t = {T}: {notes}")
    return symmetrize(samples[-1][1])


def regular_reduction_care(
    P: Problem,
    split: InputSplit,
    fact: PopovFactorization,
    opts: RdeOptions = RdeOptions(),
    tol: Tolerances = DEFAULT_TOL,
) -> RdeOutcome:
    """Solve the reduced equation over the weighted input directions.

    Restricting inputs to im R gives the regular problem
    (A, B T1, Q, S T1, T1' R T1) whose input weight is positive definite.
    Its flow limit, when it exists, must also solve the full constrained
    equation; the returned outcome carries the full-problem check in its
    cgcare field.
    """
    if split.r == 0:
        raise NotApplicable(
            "input weight has rank zero (cheap case); the reduction is undefined"
        )
    reduced = validate_problem(
        P.A, split.B1, P.Q, P.S @ split.T1, split.T1.T @ P.R @ split.T1, tol
    )
    outcome = integrate_rde(reduced, opts, tol)
    if outcome.status is RdeStatus.CONVERGED:
        full = cgcare_check(outcome.X_limit, P, tol)
        notes = outcome.notes + (
            "full-problem check "
            + ("passed" if full.is_solution else
               f"FAILED (residual {full.residual_norm:.3e}, constraint {full.constraint_norm:.3e})"),
        )
        return RdeOutcome(
            status=outcome.status,
            X_limit=outcome.X_limit,
            trajectory_samples=outcome.trajectory_samples,
            matrix_samples=outcome.matrix_samples,
            final_time=outcome.final_time,
            cgcare=full,
            notes=notes,
        )
    return outcome


def closed_loop_gramian(
    P: Problem,
    X_bar,
    fact: PopovFactorization,
    tol: Tolerances = DEFAULT_TOL,
) -> np.ndarray:
    """Observability Gramian of the optimal closed loop.

    With K the gain at X_bar, A_K = A - BK and C_K = C - DK, the Gramian
    solves A_K' P + P A_K + C_K' C_K = 0 and must reproduce X_bar whenever
    the closed loop is internally stable.  Raises NotApplicable otherwise.
    """
    data = associated(X_bar, P)
    AK = data.AX
    CK = fact.C - fact.D @ data.KX
    alpha = spectral_abscissa(AK)
    if not alpha < 0.0:
        raise NotApplicable(
            f"closed loop is not Hurwitz (spectral abscissa {alpha:.6e}); "
            "the Gramian cross-check needs internal stability"
        )
    return lyapunov_solve(AK, CK.T @ CK, tol)
