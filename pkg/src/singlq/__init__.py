"""singlq: regular-solution analysis for singular linear-quadratic control.

Decides, constructively and numerically, whether a continuous-time LQ
problem with a possibly singular input weight admits a regular
(impulse-free) optimal control, and synthesizes the optimal feedback when
one exists.
"""

from .matlib import Subspace, Tolerances
from .model import (
    AssociatedData,
    DeflectedSystem,
    InputSplit,
    PopovFactorization,
    Problem,
    ProblemError,
    associated,
    deflected,
    factor_popov,
    input_split,
    validate_problem,
)
from .riccati import (
    CgcareVerdict,
    NotApplicable,
    RdeOptions,
    RdeOutcome,
    RdeStatus,
    cgcare_check,
    closed_loop_gramian,
    finite_horizon_value,
    gcare_residual,
    integrate_rde,
    regular_reduction_care,
)
from .geometry import (
    GeometricSummary,
    Quadruple,
    finiteness_test,
    geometric_summary,
    reach_deflected,
    reachable,
    rstar,
    sstar,
    vstar,
)
from .analyzer import (
    ConditionVerdicts,
    CostCheck,
    Synthesis,
    Trajectory,
    TriState,
    analyze,
    check_condition_b,
    check_condition_d,
    simulate,
    synthesize,
    verify_optimal_cost,
)

__version__ = "0.1.0"
