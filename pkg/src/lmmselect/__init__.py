"""Convex fixed-effect variable selection for high-dimensional linear
mixed models: an l1 path solver over an analytically eliminated random
effect block, penalty-weight construction, support-recovery diagnostics,
reproducible scenario generators and a PCA route for q > n."""

from .diagnostics import (
    ConsistencyBlocks,
    CurvePoint,
    assemble_blocks,
    irrepresentable_value,
    sign_consistency_curve,
)
from .exceptions import (
    DegenerateProjection,
    DimensionMismatch,
    GroupSumMismatch,
    LmmSelectError,
    ManifestError,
    NonPsdWeight,
    NotPositiveDefinite,
    SingularPsi,
    SingularRidge,
    UnknownScenario,
    ZeroVarianceColumn,
)
from .experiment import (
    METHODS,
    ExperimentConfig,
    ExperimentReport,
    GridConfig,
    fit_method_path,
    run_experiment,
    write_report,
)
from .manifest import load_problem, save_problem
from .model import (
    FitResult,
    GroupStructure,
    LmmProblem,
    SolverConfig,
    WeightSpec,
    effective_weight_matrix,
    objective_value,
    validate,
)
from .reduction import ReducedRandomDesign, pca_reduce, select_with_reduction
from .simulate import (
    SCENARIO_NAMES,
    GeneratedInstance,
    ScenarioSpec,
    exact_recovery,
    generate,
    scenario,
    with_n,
)
from .solver import (
    PathResult,
    ReducedProblem,
    default_capital_lambda_grid,
    default_lambda_grid,
    kkt_residual,
    lambda_max,
    reduce_problem,
    solve,
    solve_path,
)
from .transforms import (
    ProjectedProblem,
    RotatedProblem,
    project_out,
    pseudoinverse,
    rotate_to_isotropic,
)
from .weights import (
    CorrelationSummary,
    correlation_summary,
    correlation_weights,
    weights_from_covariance,
)

__version__ = "0.1.0"
