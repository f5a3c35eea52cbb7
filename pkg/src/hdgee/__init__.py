"""De-biased inference for high-dimensional generalized estimating equations.

The package fits an l1-penalized working-independence initial estimator,
builds sparse projection directions by constrained l1 minimization, and
applies a one-step correction to deliver confidence intervals and tests
for arbitrary linear combinations of regression coefficients in clustered
data, together with a Monte Carlo harness for coverage studies.
"""

from .data import (
    Cluster,
    ClusteredDataset,
    ColumnSpec,
    FoldAssignment,
    load_csv,
    make_folds,
    write_csv,
)
from .errors import (
    ConvergenceError,
    DataError,
    DegenerateDirectionError,
    HdgeeError,
    NumericalError,
)
from .families import BinomialLogit, Family, GaussianIdentity, get_family
from .gee import (
    GeeMatrices,
    JacobianParts,
    WorkingCorrelation,
    estimate_gamma,
    gee_matrices,
    gee_psi,
    jacobian_parts,
    standardized_residuals,
)
from .inference import (
    CvCurve,
    InferenceResult,
    bh_adjust,
    cv_select_lambda_prime,
    fit_pipeline,
    infer_target,
    one_step_estimate,
    projected_psi,
    screen_dataset,
)
from .lasso import LambdaPath, LassoFit, cv_select_lambda, fit_lasso, lambda_max
from .projection import (
    ProjectionDirection,
    default_slack_grid,
    direction_problem,
    estimate_direction,
)
from .simplex import LpSolution, LpStandardProblem, solve_lp
from .simulate import (
    SimulationConfig,
    gen_dataset,
    oracle_gee_fit,
    preset,
    run_monte_carlo,
)

__version__ = "0.1.0"
