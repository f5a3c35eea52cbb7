"""One-step de-biased inference for linear combinations of coefficients.

Pipeline: an l1-penalized initial fit beta_hat, a moment estimate of the
working correlation, the sensitivity/variability matrices S and V, a
sparse projection direction for the loading xi, and a single Newton-type
correction of the plug-in xi' beta_hat along the projected estimating
function:

    theta_tilde = xi' beta_hat + (omega' S omega)^{-1} * omega' Psi(beta_hat)

with variance approximated by omega' V omega / (sqrt(n) omega' S omega)^2.

The feasibility slack of the projection direction is tuned by K-fold
cross-validation on the squared projected estimating function evaluated
on held-out clusters; the reported selection is the smallest grid value
whose criterion is within one standard error of the minimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .data import ClusteredDataset, make_folds
from .errors import DataError, DegenerateDirectionError, NumericalError
from .families import Family
from .gee import (
    GeeMatrices,
    WorkingCorrelation,
    estimate_gamma,
    gee_matrices,
    gee_psi,
)
from .lasso import LambdaPath, LassoFit, cv_select_lambda
from .projection import ProjectionDirection, default_slack_grid, estimate_direction

__all__ = [
    "InferenceResult",
    "CvCurve",
    "PipelineFit",
    "TargetInference",
    "projected_psi",
    "one_step_estimate",
    "cv_select_lambda_prime",
    "LambdaPrimeCvContext",
    "bh_adjust",
    "split_for_inference",
    "fit_pipeline",
    "infer_target",
    "screen_dataset",
]

QUAD_FORM_FLOOR = 1e-10


@dataclass
class InferenceResult:
    """Point estimate, interval and test for one loading vector."""

    theta_hat: float
    theta_tilde: float
    se: float
    ci: tuple[float, float]
    z: float
    p_value: float
    lambda_prime_used: float


@dataclass
class CvCurve:
    """Cross-validation trace over the slack grid.

    cv_value holds the per-grid-point totals (sums over folds); se_at_min
    is the standard error of the fold criteria at the minimizing point.
    selected is the one-standard-error choice, min_index the plain argmin.
    """

    grid: np.ndarray
    cv_value: np.ndarray
    per_fold: np.ndarray
    se_at_min: float
    selected: int
    min_index: int
    n_degenerate: int = 0

    def selected_value(self, rule: str = "1se") -> float:
        return float(self.grid[self.index_for(rule)])

    def index_for(self, rule: str) -> int:
        if rule == "1se":
            return self.selected
        if rule == "min":
            return self.min_index
        raise DataError(f"unknown selection rule {rule!r}; use '1se' or 'min'")


def projected_psi(
    dataset: ClusteredDataset,
    family: Family,
    beta_hat,
    omega_hat,
    corr: WorkingCorrelation,
    theta: float,
    xi,
) -> float:
    """Projected estimating function omega' Psi(beta_hat + omega (theta - xi'beta_hat))."""
    beta_hat = np.asarray(beta_hat, dtype=float)
    omega_hat = np.asarray(omega_hat, dtype=float)
    xi = np.asarray(xi, dtype=float)
    shift = theta - float(xi @ beta_hat)
    beta = beta_hat + omega_hat * shift
    return float(omega_hat @ gee_psi(dataset, family, beta, corr))


def one_step_estimate(
    dataset: ClusteredDataset,
    family: Family,
    beta_hat,
    omega: ProjectionDirection,
    corr: WorkingCorrelation,
    xi,
    alpha: float = 0.05,
    mats: GeeMatrices | None = None,
) -> InferenceResult:
    """Single Newton-type correction of the plug-in estimate along omega.

    The correction at the plug-in point needs no shifted evaluation:
    the projected function there is just omega' Psi(beta_hat).
    """
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha must lie in (0, 1), got {alpha}")
    beta_hat = np.asarray(beta_hat, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        raise DataError("loading vector xi must be nonzero")
    if mats is None:
        mats = gee_matrices(dataset, family, beta_hat, corr)
    w = omega.omega_hat
    denom = float(w @ mats.S @ w)
    if denom <= QUAD_FORM_FLOOR:
        raise NumericalError(
            f"projection direction has degenerate quadratic form ({denom:.2e})"
        )
    theta_hat = float(xi @ beta_hat)
    theta_tilde = theta_hat + float(w @ mats.psi) / denom
    var_num = float(w @ mats.V @ w)
    se = float(np.sqrt(max(var_num, 0.0)) / (np.sqrt(dataset.n) * denom))
    if se <= 0.0:
        raise NumericalError("variance estimate is not positive")
    zcrit = float(norm.ppf(1.0 - alpha / 2.0))
    z = theta_tilde / se
    p = float(2.0 * norm.sf(abs(z)))
    return InferenceResult(
        theta_hat=theta_hat,
        theta_tilde=theta_tilde,
        se=se,
        ci=(theta_tilde - zcrit * se, theta_tilde + zcrit * se),
        z=float(z),
        p_value=p,
        lambda_prime_used=omega.lambda_prime,
    )


@dataclass
class _FoldState:
    train: ClusteredDataset
    test: ClusteredDataset
    beta: np.ndarray
    corr: WorkingCorrelation
    S: np.ndarray
    psi_train: np.ndarray


class LambdaPrimeCvContext:
    """Per-fold quantities of the slack cross-validation.

    Everything here is independent of the loading vector, so one context
    serves any number of targets (the screen runs all p coordinates
    against the same folds). When fixed estimates are supplied (the
    data-splitting variant) the per-fold initial fit and correlation are
    not re-estimated.
    """

    def __init__(
        self,
        dataset: ClusteredDataset,
        family: Family,
        corr_kind: str = "ar1",
        K: int = 5,
        seed: int = 0,
        lasso_folds: int = 10,
        lasso_path_length: int = 100,
        fixed_beta=None,
        fixed_corr: WorkingCorrelation | None = None,
    ):
        if K < 2:
            raise DataError(f"K={K}; at least 2 folds are required")
        self.dataset = dataset
        self.family = family
        self.K = K
        folds = make_folds(dataset, K, seed)
        self.folds = []
        for k in range(K):
            train = dataset.subset(folds.train_indices(k))
            test = dataset.subset(folds.test_indices(k))
            if fixed_beta is not None:
                beta_k = np.asarray(fixed_beta, dtype=float)
                corr_k = fixed_corr
            else:
                _, fit = cv_select_lambda(
                    train,
                    family,
                    K=min(lasso_folds, train.n),
                    path_length=lasso_path_length,
                    seed=seed + 7919 * (k + 1),
                )
                beta_k = fit.beta_hat
                corr_k = estimate_gamma(train, family, beta_k, corr_kind)
            mats = gee_matrices(train, family, beta_k, corr_k)
            self.folds.append(
                _FoldState(
                    train=train,
                    test=test,
                    beta=beta_k,
                    corr=corr_k,
                    S=mats.S,
                    psi_train=mats.psi,
                )
            )

    def curve(self, xi, grid) -> CvCurve:
        """Evaluate the held-out squared projected estimating function."""
        xi = np.asarray(xi, dtype=float)
        grid = np.asarray(grid, dtype=float)
        if grid.size == 0 or np.any(grid <= 0):
            raise DataError("the slack grid must be non-empty and positive")
        if np.any(np.diff(grid) < 0):
            raise DataError("the slack grid must be sorted increasing")
        K, L = self.K, len(grid)
        per_fold = np.empty((K, L))
        n_degenerate = 0
        for k, st in enumerate(self.folds):
            theta_hat_k = float(xi @ st.beta)
            for l, lam in enumerate(grid):
                try:
                    d = estimate_direction(st.S, xi, lam)
                    w = d.omega_hat
                    denom = float(w @ st.S @ w)
                    theta_k = theta_hat_k + float(w @ st.psi_train) / denom
                    beta_tilde = st.beta + w * (theta_k - theta_hat_k)
                    val = float(
                        w @ gee_psi(st.test, self.family, beta_tilde, st.corr)
                    )
                    per_fold[k, l] = val * val
                except (DegenerateDirectionError, NumericalError):
                    per_fold[k, l] = np.inf
                    n_degenerate += 1
        cv = per_fold.sum(axis=0)
        if not np.any(np.isfinite(cv)):
            raise NumericalError(
                "every slack on the grid produced a degenerate direction in "
                "some fold; lower the grid minimum"
            )
        min_index = int(np.argmin(cv))
        vals = per_fold[:, min_index]
        se_at_min = float(np.std(vals, ddof=1) / np.sqrt(K))
        threshold = cv[min_index] + se_at_min
        selected = min_index
        for l in range(L):
            if cv[l] <= threshold:
                selected = l
                break
        return CvCurve(
            grid=grid,
            cv_value=cv,
            per_fold=per_fold,
            se_at_min=se_at_min,
            selected=selected,
            min_index=min_index,
            n_degenerate=n_degenerate,
        )


def cv_select_lambda_prime(
    dataset: ClusteredDataset,
    family: Family,
    xi,
    K: int = 5,
    grid=None,
    corr_kind: str = "ar1",
    seed: int = 0,
    lasso_folds: int = 10,
    lasso_path_length: int = 100,
) -> CvCurve:
    """K-fold selection of the direction's feasibility slack for one loading."""
    if grid is None:
        grid = default_slack_grid(xi)
    ctx = LambdaPrimeCvContext(
        dataset,
        family,
        corr_kind=corr_kind,
        K=K,
        seed=seed,
        lasso_folds=lasso_folds,
        lasso_path_length=lasso_path_length,
    )
    return ctx.curve(xi, grid)


def bh_adjust(p_values) -> np.ndarray:
    """Step-up adjusted p-values, returned in the input order."""
    p = np.asarray(p_values, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise DataError("p_values must be a non-empty 1-d sequence")
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise DataError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum.accumulate(ranked[::-1])[::-1]
    adj = np.minimum(adj, 1.0)
    out = np.empty(m)
    out[order] = adj
    return out


def split_for_inference(
    dataset: ClusteredDataset, seed: int
) -> tuple[ClusteredDataset, ClusteredDataset]:
    """Seeded 50/50 cluster split: (estimation half, inference half)."""
    if dataset.n < 4:
        raise DataError(
            f"data splitting needs at least 4 clusters, got {dataset.n}"
        )
    perm = np.random.default_rng(seed).permutation(dataset.n)
    n_est = (dataset.n + 1) // 2
    return dataset.subset(np.sort(perm[:n_est])), dataset.subset(
        np.sort(perm[n_est:])
    )


@dataclass
class PipelineFit:
    """Initial fit, working correlation and GEE matrices, ready for targets."""

    family: Family
    corr: WorkingCorrelation
    beta_hat: np.ndarray
    lasso_fit: LassoFit
    lambda_path: LambdaPath
    mats: GeeMatrices
    inference_data: ClusteredDataset
    estimation_data: ClusteredDataset
    data_split: bool


@dataclass
class TargetInference:
    """Per-loading curve plus results under the requested selection rule(s)."""

    xi: np.ndarray
    curve: CvCurve
    by_rule: dict = field(default_factory=dict)

    def result(self, rule: str = "1se") -> InferenceResult:
        return self.by_rule[rule]


def fit_pipeline(
    dataset: ClusteredDataset,
    family: Family,
    corr_kind: str = "ar1",
    lasso_folds: int = 10,
    lasso_path_length: int = 100,
    seed: int = 0,
    data_split: bool = False,
) -> PipelineFit:
    """Initial estimator, correlation estimate and GEE matrices.

    With data_split=True the initial fit and correlation come from one
    half of the clusters while the estimating function, its matrices and
    all inference use the other half.
    """
    if data_split:
        est, inf = split_for_inference(dataset, seed)
    else:
        est = inf = dataset
    path, fit = cv_select_lambda(
        est,
        family,
        K=min(lasso_folds, est.n),
        path_length=lasso_path_length,
        seed=seed,
    )
    corr = estimate_gamma(est, family, fit.beta_hat, corr_kind)
    mats = gee_matrices(inf, family, fit.beta_hat, corr)
    return PipelineFit(
        family=family,
        corr=corr,
        beta_hat=fit.beta_hat,
        lasso_fit=fit,
        lambda_path=path,
        mats=mats,
        inference_data=inf,
        estimation_data=est,
        data_split=data_split,
    )


def make_cv_context(
    pipe: PipelineFit,
    K: int = 5,
    seed: int = 0,
    lasso_folds: int = 10,
    lasso_path_length: int = 100,
) -> LambdaPrimeCvContext:
    """Slack-CV context on the pipeline's inference data.

    Under data splitting the per-fold initial fit and correlation are the
    (independently estimated) pipeline ones; otherwise they are re-fit on
    each training fold.
    """
    return LambdaPrimeCvContext(
        pipe.inference_data,
        pipe.family,
        corr_kind=pipe.corr.kind,
        K=K,
        seed=seed,
        lasso_folds=lasso_folds,
        lasso_path_length=lasso_path_length,
        fixed_beta=pipe.beta_hat if pipe.data_split else None,
        fixed_corr=pipe.corr if pipe.data_split else None,
    )


def infer_target(
    pipe: PipelineFit,
    xi,
    alpha: float = 0.05,
    grid=None,
    rules=("1se",),
    context: LambdaPrimeCvContext | None = None,
    K: int = 5,
    seed: int = 0,
) -> TargetInference:
    """Tune the slack for one loading and run the one-step inference."""
    xi = np.asarray(xi, dtype=float)
    if grid is None:
        grid = default_slack_grid(xi)
    if context is None:
        context = make_cv_context(pipe, K=K, seed=seed)
    curve = context.curve(xi, grid)
    out = TargetInference(xi=xi, curve=curve)
    for rule in rules:
        lam = curve.selected_value(rule)
        direction = estimate_direction(pipe.mats.S, xi, lam)
        out.by_rule[rule] = one_step_estimate(
            pipe.inference_data,
            pipe.family,
            pipe.beta_hat,
            direction,
            pipe.corr,
            xi,
            alpha=alpha,
            mats=pipe.mats,
        )
    return out


def screen_dataset(
    pipe: PipelineFit,
    alpha: float = 0.05,
    grid=None,
    rule: str = "1se",
    K: int = 5,
    seed: int = 0,
    names=None,
):
    """Single-coefficient inference for every covariate plus BH adjustment.

    Returns a list of row dicts sorted by adjusted p-value; rows with
    adjusted p below alpha carry significant=True.
    """
    p = pipe.inference_data.p
    context = make_cv_context(pipe, K=K, seed=seed)
    results = []
    for j in range(p):
        xi = np.zeros(p)
        xi[j] = 1.0
        t = infer_target(
            pipe, xi, alpha=alpha, grid=grid, rules=(rule,), context=context
        )
        results.append(t.result(rule))
    adjusted = bh_adjust([r.p_value for r in results])
    names = names or [f"x{j + 1}" for j in range(p)]
    rows = []
    for j, (r, padj) in enumerate(zip(results, adjusted)):
        rows.append(
            {
                "name": names[j],
                "index": j + 1,
                "estimate": r.theta_tilde,
                "se": r.se,
                "ci_low": r.ci[0],
                "ci_high": r.ci[1],
                "z": r.z,
                "p": r.p_value,
                "p_adjusted": float(padj),
                "significant": bool(padj < alpha),
                "lambda_prime": r.lambda_prime_used,
            }
        )
    rows.sort(key=lambda row: (row["p_adjusted"], row["index"]))
    return rows
