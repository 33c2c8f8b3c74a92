"""Selection-bias-corrected estimators of a finite-population proportion.

Two routes, both anchored to the census:

* calibrated design weights -> Horvitz-Thompson proportion, with a two-stage
  linearized (with-replacement, no finite-population correction) variance;
* logistic-regression mass imputation over the full census, with a
  cluster-robust sandwich covariance pushed through the delta method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .population import Population

Z95 = 1.959964
Z90 = 1.644854

# Auxiliary vector shared by both methods: the generative covariates plus the
# village baseline log-odds, with an intercept.
AUX_COLUMNS = (
    "intercept",
    "population_scaled",
    "distance_km",
    "child_age_months",
    "guardian_age_yr",
    "child_male",
    "guardian_male",
    "baseline_logodds",
)

# Collinearity fallback: drop least-informative auxiliaries first; the
# baseline log-odds goes last and the intercept is never dropped.
DROP_ORDER = (
    "population_scaled",
    "distance_km",
    "child_age_months",
    "child_male",
    "guardian_male",
    "guardian_age_yr",
    "baseline_logodds",
)

CONDITION_LIMIT = 1e12

METHOD_CALIBRATED = "calibrated"
METHOD_LOGISTIC = "logistic_regression"


class EstimationError(RuntimeError):
    """A replicate-level estimation failure; the harness records, never aborts."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass(frozen=True)
class AuxiliaryMatrix:
    """Census auxiliary rows and their full-population column totals."""

    matrix: np.ndarray
    totals: np.ndarray
    columns: tuple[str, ...] = AUX_COLUMNS


def build_auxiliary(pop: Population) -> AuxiliaryMatrix:
    x = np.column_stack([np.ones(pop.n_children), pop.covariates(), pop.baseline_offset()])
    return AuxiliaryMatrix(matrix=x, totals=x.sum(axis=0))


@dataclass(frozen=True)
class DesignWeights:
    """Two-stage inverse inclusion probabilities for the realized respondents."""

    n_villages_total: int  # M
    sampled_villages: np.ndarray  # (m,) census village ids
    village_census_sizes: np.ndarray  # (m,) V_j
    village_respondents: np.ndarray  # (m,) v_j, zeros allowed
    respondent_slot: np.ndarray  # (n,) index into the sampled-village arrays
    pi_village: float  # m / M
    pi_within: np.ndarray  # (n,) v_j / V_j per respondent
    d: np.ndarray  # (n,) design weight per respondent

    @property
    def m(self) -> int:
        return self.sampled_villages.shape[0]


def compute_design_weights(
    pop: Population, sampled_villages: np.ndarray, respondents: np.ndarray
) -> DesignWeights:
    """d_ij = 1 / (pi_j * pi_i|j) with pi_j = m/M and pi_i|j = v_j/V_j."""
    m = sampled_villages.shape[0]
    if m < 1:
        raise EstimationError("no sampled villages")
    slot_of_village = np.full(pop.n_villages, -1, dtype=np.int64)
    slot_of_village[sampled_villages] = np.arange(m)
    resp_village = pop.child_village[respondents]
    slots = slot_of_village[resp_village]
    if np.any(slots < 0):
        raise EstimationError(
            "inconsistent sample", "respondent recorded in a village outside the sample"
        )
    v = np.bincount(slots, minlength=m).astype(np.int64)
    big_v = pop.village_n_children[sampled_villages]
    pi_village = m / pop.n_villages
    pi_within = v[slots] / big_v[slots]
    return DesignWeights(
        n_villages_total=pop.n_villages,
        sampled_villages=sampled_villages,
        village_census_sizes=big_v,
        village_respondents=v,
        respondent_slot=slots,
        pi_village=pi_village,
        pi_within=pi_within,
        d=1.0 / (pi_village * pi_within),
    )


@dataclass(frozen=True)
class CalibrationResult:
    w: np.ndarray
    lam: np.ndarray
    kept: tuple[int, ...]
    dropped: tuple[str, ...]
    constraint_residual: float


def calibrate_weights(
    d: np.ndarray,
    x: np.ndarray,
    totals: np.ndarray,
    columns: tuple[str, ...] = AUX_COLUMNS,
    condition_limit: float = CONDITION_LIMIT,
) -> CalibrationResult:
    """Chi-square-distance calibration of d toward the census totals.

    Minimizing sum (w-d)^2/(2d) subject to X'w = t has the closed form
    w = d * (1 + x'lambda) with (sum d x x') lambda = t - sum d x. Negative
    weights are permitted. Ill-conditioned systems shed auxiliaries in
    DROP_ORDER and retry.
    """
    n, p = x.shape
    if n < p:
        raise EstimationError("insufficient respondents", f"{n} respondents for {p} auxiliaries")
    kept = list(range(p))
    dropped: list[str] = []
    drop_queue = [columns.index(name) for name in DROP_ORDER if name in columns]
    while True:
        xk = x[:, kept]
        a = (xk * d[:, None]).T @ xk
        if np.linalg.cond(a) <= condition_limit:
            break
        candidates = [j for j in drop_queue if j in kept]
        if not candidates:
            raise EstimationError("singular calibration system")
        kept.remove(candidates[0])
        dropped.append(columns[candidates[0]])
    b = totals[kept] - xk.T @ d
    try:
        lam = np.linalg.solve(a, b)
        lam += np.linalg.solve(a, b - a @ lam)  # one refinement pass
    except np.linalg.LinAlgError as exc:
        raise EstimationError("singular calibration system", str(exc)) from exc
    w = d * (1.0 + xk @ lam)
    achieved = xk.T @ w
    scale = np.abs(totals[kept]).max()
    residual = float(np.abs(achieved - totals[kept]).max() / scale)
    if residual > 1e-8:
        raise EstimationError("calibration constraints unsatisfied", f"residual {residual:.3e}")
    return CalibrationResult(
        w=w, lam=lam, kept=tuple(kept), dropped=tuple(dropped), constraint_residual=residual
    )


def ht_proportion(w: np.ndarray, y: np.ndarray, n_population: int) -> float:
    """Weighted total of outcomes against the known census size."""
    if w.shape[0] == 0:
        raise EstimationError("empty sample")
    if n_population <= 0:
        raise ValueError("population size must be positive")
    return float(w @ y) / n_population


def calibration_variance(
    dw: DesignWeights,
    x: np.ndarray,
    y: np.ndarray,
    divisor: str = "estimated",
    n_population: int | None = None,
) -> float:
    """Two-stage linearized standard error of the calibrated proportion.

    Residuals come from a d-weighted least-squares fit of y on the (kept)
    auxiliaries. The between-village term uses the with-replacement form
    (M^2/m) * var(z_j) on estimated village residual totals; the within term
    expands per-village residual variances without finite-population
    correction. Villages with fewer than two respondents contribute no
    within-variance; empty sampled villages still count toward m.
    """
    m = dw.m
    if m < 2:
        raise EstimationError("variance undefined", "fewer than 2 sampled villages")
    big_m = dw.n_villages_total

    xd = x * dw.d[:, None]
    try:
        beta = np.linalg.solve(xd.T @ x, xd.T @ y)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("singular residual fit", str(exc)) from exc
    e = y - x @ beta

    z = np.zeros(m)
    np.add.at(z, dw.respondent_slot, e / dw.pi_within)
    var_between = big_m**2 / m * z.var(ddof=1)

    sum_e = np.zeros(m)
    sum_e2 = np.zeros(m)
    np.add.at(sum_e, dw.respondent_slot, e)
    np.add.at(sum_e2, dw.respondent_slot, e**2)
    v = dw.village_respondents
    multi = v >= 2
    s2 = np.zeros(m)
    s2[multi] = (sum_e2[multi] - sum_e[multi] ** 2 / v[multi]) / (v[multi] - 1)
    big_v = dw.village_census_sizes
    var_within = (big_m / m) * float(np.sum(big_v[multi] ** 2 / v[multi] * s2[multi]))

    if divisor == "known":
        if n_population is None:
            raise ValueError("known divisor requires the census size")
        denom = float(n_population)
    else:
        denom = (big_m / m) * float(big_v.sum())
    return math.sqrt(max(var_between + var_within, 0.0)) / denom


@dataclass(frozen=True)
class LogisticFit:
    beta: np.ndarray
    bread: np.ndarray  # inverse of the final X'WX
    iterations: int
    deviance: float
    converged: bool


def fit_logistic(
    x: np.ndarray, y: np.ndarray, tol: float = 1e-8, max_iter: int = 50
) -> LogisticFit:
    """Maximum-likelihood logistic regression by iteratively reweighted least squares.

    Raises on a single-class outcome, and on runaway coefficients (|beta| > 15
    before convergence), which signal complete separation.
    """
    n, p = x.shape
    if n < p:
        raise EstimationError("insufficient respondents", f"{n} respondents for {p} columns")
    if y.min() == y.max():
        raise EstimationError("single-class outcome")
    beta = np.zeros(p)
    prev_dev = math.inf
    for it in range(1, max_iter + 1):
        prob = np.clip(expit(x @ beta), 1e-12, 1.0 - 1e-12)
        w = prob * (1.0 - prob)
        dev = -2.0 * float(y @ np.log(prob) + (1.0 - y) @ np.log1p(-prob))
        if abs(prev_dev - dev) < tol:
            bread = np.linalg.inv((x * w[:, None]).T @ x)
            return LogisticFit(beta=beta, bread=bread, iterations=it, deviance=dev, converged=True)
        prev_dev = dev
        try:
            beta = beta + np.linalg.solve((x * w[:, None]).T @ x, x.T @ (y - prob))
        except np.linalg.LinAlgError as exc:
            raise EstimationError("singular logistic system", str(exc)) from exc
        if np.abs(beta).max() > 15.0:
            raise EstimationError("separation", f"|beta| reached {np.abs(beta).max():.1f}")
    raise EstimationError("logistic fit did not converge", f"{max_iter} iterations")


def cluster_sandwich(
    fit: LogisticFit,
    x: np.ndarray,
    y: np.ndarray,
    clusters: np.ndarray,
    small_sample: bool = True,
) -> np.ndarray:
    """Cluster-robust covariance c * B (sum_j u_j u_j') B.

    u_j sums the score contributions x_i (y_i - p_i) within cluster j, and
    c = g/(g-1) over the g respondent clusters (CR1-style, switchable).
    """
    ids, index = np.unique(clusters, return_inverse=True)
    g = ids.shape[0]
    if g < 2:
        raise EstimationError("variance undefined", "fewer than 2 respondent clusters")
    scores = x * (y - expit(x @ fit.beta))[:, None]
    u = np.zeros((g, x.shape[1]))
    np.add.at(u, index, scores)
    meat = u.T @ u
    c = g / (g - 1.0) if small_sample else 1.0
    sigma = c * fit.bread @ meat @ fit.bread
    return 0.5 * (sigma + sigma.T)


def imputation_estimate(beta: np.ndarray, x_population: np.ndarray) -> float:
    """Mean fitted probability over the entire census, respondents included."""
    return float(np.mean(expit(x_population @ beta)))


def imputation_gradient(beta: np.ndarray, x_population: np.ndarray) -> np.ndarray:
    """Gradient of the census-mean prediction: (1/N) sum p_i (1-p_i) x_i."""
    prob = expit(x_population @ beta)
    return x_population.T @ (prob * (1.0 - prob)) / x_population.shape[0]


def imputation_variance(
    beta: np.ndarray, sigma: np.ndarray, x_population: np.ndarray
) -> tuple[float, bool]:
    """Delta-method standard error; returns (se, clamped_to_zero)."""
    grad = imputation_gradient(beta, x_population)
    var = float(grad @ sigma @ grad)
    if var < 0.0:
        return 0.0, True
    return math.sqrt(var), False


def wald_intervals(p_hat: float, se: float):
    """95% and 90% normal-theory intervals, deliberately not clipped to [0, 1]."""
    if se < 0:
        raise ValueError("se must be nonnegative")
    ci95 = (p_hat - Z95 * se, p_hat + Z95 * se)
    ci90 = (p_hat - Z90 * se, p_hat + Z90 * se)
    return ci95, ci90


@dataclass(frozen=True)
class EstimatorOptions:
    sandwich_small_sample: bool = True
    calibration_variance_divisor: str = "estimated"


@dataclass(frozen=True)
class EstimateResult:
    method: str
    p_hat: float
    se: float
    ci95: tuple[float, float]
    ci90: tuple[float, float]
    diagnostics: dict = field(default_factory=dict)


def estimate_calibrated(
    pop: Population,
    aux: AuxiliaryMatrix,
    sampled_villages: np.ndarray,
    respondents: np.ndarray,
    y1: np.ndarray,
    options: EstimatorOptions = EstimatorOptions(),
) -> EstimateResult:
    """Full calibration route for one realized sample."""
    if respondents.size == 0:
        raise EstimationError("empty sample")
    dw = compute_design_weights(pop, sampled_villages, respondents)
    x = aux.matrix[respondents]
    y = y1[respondents].astype(float)
    cal = calibrate_weights(dw.d, x, aux.totals, aux.columns)
    p_hat = ht_proportion(cal.w, y, pop.n_children)
    se = calibration_variance(
        dw,
        x[:, cal.kept],
        y,
        divisor=options.calibration_variance_divisor,
        n_population=pop.n_children,
    )
    ci95, ci90 = wald_intervals(p_hat, se)
    return EstimateResult(
        method=METHOD_CALIBRATED,
        p_hat=p_hat,
        se=se,
        ci95=ci95,
        ci90=ci90,
        diagnostics={
            "n_respondents": int(respondents.size),
            "m_villages": int(sampled_villages.size),
            "dropped_auxiliaries": cal.dropped,
            "constraint_residual": cal.constraint_residual,
        },
    )


def estimate_imputation(
    pop: Population,
    aux: AuxiliaryMatrix,
    sampled_villages: np.ndarray,
    respondents: np.ndarray,
    y1: np.ndarray,
    options: EstimatorOptions = EstimatorOptions(),
) -> EstimateResult:
    """Full mass-imputation route for one realized sample."""
    if respondents.size == 0:
        raise EstimationError("empty sample")
    x = aux.matrix[respondents]
    y = y1[respondents].astype(float)
    fit = fit_logistic(x, y)
    sigma = cluster_sandwich(
        fit,
        x,
        y,
        pop.child_village[respondents],
        small_sample=options.sandwich_small_sample,
    )
    p_hat = imputation_estimate(fit.beta, aux.matrix)
    se, clamped = imputation_variance(fit.beta, sigma, aux.matrix)
    ci95, ci90 = wald_intervals(p_hat, se)
    return EstimateResult(
        method=METHOD_LOGISTIC,
        p_hat=p_hat,
        se=se,
        ci95=ci95,
        ci90=ci90,
        diagnostics={
            "n_respondents": int(respondents.size),
            "m_villages": int(sampled_villages.size),
            "irls_iterations": fit.iterations,
            "variance_clamped": clamped,
        },
    )
