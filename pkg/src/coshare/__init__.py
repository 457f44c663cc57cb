"""Constrained risk sharing on finite probability spaces.

Exact finite-space primitives, convex-order checks, distortion and
mean-variance risk measures, comonotonic improvement of allocations,
feasibility and solidity classification of constraint sets, capped
mean-variance solvers, and a grid oracle, with a JSON-driven CLI.
"""

from .errors import (
    ContractError,
    ConvergenceError,
    CoshareError,
    DomainError,
    InfeasibleError,
    NonterminationError,
    RefinementError,
    SchemaError,
    ValidationError,
)
from .probspace import (
    FiniteSpace,
    GammaAggregate,
    RandomVariable,
    discretize_gamma,
    distribution_of,
    equal_weight_refinement,
    gamma_quantile,
    moments,
    push_forward,
    quantile,
)
from .stochorder import (
    StopLossCurve,
    convex_order_leq,
    pigou_dalton_transfer,
    stop_loss,
)
from .riskmeasures import (
    Consistency,
    RiskMeasureSpec,
    convex_ladder,
    cx_consistency_flag,
    es,
    evaluate,
    expected_convex_loss,
    mean_variance,
    var,
)
from .allocation import (
    Allocation,
    ImprovementCertificate,
    check_clearing,
    comonotonic_improvement,
    condition_on_aggregate,
    is_comonotonic,
)
from .constraints import (
    AggregateEnvelope,
    Constraint,
    ExpectationConstraint,
    IdiosyncraticRetention,
    OrliczBound,
    PathwiseBounds,
    RiskCeiling,
    RiskFloor,
    Solidity,
    SolidityVerdict,
    SolidityWitness,
    Violation,
    check_feasible,
    classify_constraint,
    classify_solidity,
    falsify_solidity,
)
from .mvsolver import (
    MVProblem,
    RegimeReport,
    VarScenarioReport,
    mv_objective,
    saturation_curve,
    solve_capped_mv,
    statewise_projection,
    two_agent_fixed_point,
    unconstrained_shares,
    var_scenario,
)
from .oracle import (
    GridSpec,
    ScalarFamily,
    comonotone_minimize,
    grid_minimize,
)
from .cli import (
    ReproduceMismatch,
    canonical_problem,
    emit_problem,
    emit_report,
    load_problem,
    main,
    reproduce,
    run_problem,
)

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "AggregateEnvelope",
    "Consistency",
    "Constraint",
    "ContractError",
    "ConvergenceError",
    "CoshareError",
    "DomainError",
    "ExpectationConstraint",
    "FiniteSpace",
    "GammaAggregate",
    "GridSpec",
    "IdiosyncraticRetention",
    "ImprovementCertificate",
    "InfeasibleError",
    "MVProblem",
    "NonterminationError",
    "OrliczBound",
    "PathwiseBounds",
    "RandomVariable",
    "RefinementError",
    "ReproduceMismatch",
    "RegimeReport",
    "RiskCeiling",
    "RiskFloor",
    "RiskMeasureSpec",
    "ScalarFamily",
    "SchemaError",
    "Solidity",
    "SolidityVerdict",
    "SolidityWitness",
    "StopLossCurve",
    "ValidationError",
    "VarScenarioReport",
    "Violation",
    "canonical_problem",
    "check_clearing",
    "check_feasible",
    "classify_constraint",
    "classify_solidity",
    "comonotone_minimize",
    "comonotonic_improvement",
    "condition_on_aggregate",
    "convex_ladder",
    "convex_order_leq",
    "cx_consistency_flag",
    "discretize_gamma",
    "distribution_of",
    "emit_problem",
    "emit_report",
    "equal_weight_refinement",
    "es",
    "evaluate",
    "expected_convex_loss",
    "falsify_solidity",
    "gamma_quantile",
    "grid_minimize",
    "is_comonotonic",
    "load_problem",
    "main",
    "mean_variance",
    "moments",
    "mv_objective",
    "pigou_dalton_transfer",
    "push_forward",
    "quantile",
    "reproduce",
    "run_problem",
    "saturation_curve",
    "solve_capped_mv",
    "statewise_projection",
    "stop_loss",
    "two_agent_fixed_point",
    "unconstrained_shares",
    "var",
    "var_scenario",
]
