"""Independent oracles and the end-to-end property checks behind `validate`.

Every numeric route in the estimators has a second, structurally different
implementation here (dense KKT solve, scipy Newton, finite differences,
Monte Carlo redraws); the checks compare the two. Tests and the CLI share
this module so a corrupted estimator fails in both places.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .config import OutcomeCoefficients, PopulationConfig, icc_to_variance
from .estimators import (
    AuxiliaryMatrix,
    DesignWeights,
    EstimatorOptions,
    build_auxiliary,
    calibrate_weights,
    calibration_variance,
    cluster_sandwich,
    estimate_calibrated,
    estimate_imputation,
    fit_logistic,
    ht_proportion,
    imputation_estimate,
    imputation_gradient,
)
from .population import Population, generate_baseline, synthesize_population


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


# ---------------------------------------------------------------------------
# Oracles


def kkt_calibration_oracle(d: np.ndarray, x: np.ndarray, totals: np.ndarray) -> np.ndarray:
    """Chi-square calibration by solving the full dense KKT system.

    Stationarity of sum (w-d)^2/(2d) - lam'(X'w - t) gives w/d - x'lam = 1;
    stacking that with the constraints yields an (n+p) linear system solved
    without exploiting the closed form.
    """
    n, p = x.shape
    a = np.zeros((n + p, n + p))
    a[:n, :n] = np.diag(1.0 / d)
    a[:n, n:] = -x
    a[n:, :n] = x.T
    b = np.concatenate([np.ones(n), totals])
    sol = np.linalg.solve(a, b)
    return sol[:n]


def newton_logistic_oracle(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Logistic MLE via scipy trust-region Newton on the log-loss."""

    def nll(b):
        eta = x @ b
        return float(np.sum(np.logaddexp(0.0, eta)) - y @ eta)

    def grad(b):
        return x.T @ (expit(x @ b) - y)

    def hess(b):
        prob = expit(x @ b)
        return (x * (prob * (1.0 - prob))[:, None]).T @ x

    res = minimize(
        nll,
        np.zeros(x.shape[1]),
        jac=grad,
        hess=hess,
        method="trust-exact",
        options={"gtol": 1e-10, "maxiter": 200},
    )
    return res.x


def finite_difference_gradient(beta: np.ndarray, x_pop: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the census-mean prediction map at beta."""
    grad = np.zeros_like(beta)
    for k in range(beta.shape[0]):
        bp, bm = beta.copy(), beta.copy()
        bp[k] += h
        bm[k] -= h
        grad[k] = (imputation_estimate(bp, x_pop) - imputation_estimate(bm, x_pop)) / (2 * h)
    return grad


# ---------------------------------------------------------------------------
# Fixed toy design for the calibration-variance Monte Carlo oracle


@dataclass(frozen=True)
class ToyDesign:
    """Six villages; first stage draws villages with replacement (matching the
    no-FPC variance form), second stage is SRSWOR of a fixed size."""

    village_sizes: tuple[int, ...] = (60, 55, 70, 50, 64, 45)
    n_per_village: int = 12
    m_draws: int = 2

    def build(self, seed: int = 7):
        rng = np.random.default_rng(seed)
        children_x = []
        children_y = []
        village_of = []
        for j, vj in enumerate(self.village_sizes):
            x1 = rng.normal(0.0, 1.0, vj)
            # Village-level shifts dominate the residual structure so the
            # between-PSU term carries most of the variance.
            shift = rng.normal(0.0, 1.2)
            y = (rng.random(vj) < expit(0.4 + 0.7 * x1 + shift)).astype(float)
            children_x.append(x1)
            children_y.append(y)
            village_of.append(np.full(vj, j))
        return (
            np.concatenate(children_x),
            np.concatenate(children_y),
            np.concatenate(village_of),
        )


def toy_redraw_estimate(
    x1: np.ndarray,
    y: np.ndarray,
    village_of: np.ndarray,
    design: ToyDesign,
    rng,
    divisor: str = "estimated",
):
    """One with-replacement redraw of the toy design; returns (p_hat, var_hat)."""
    sizes = np.asarray(design.village_sizes)
    big_m = sizes.shape[0]
    m = design.m_draws
    n_pop = int(sizes.sum())
    aux = np.column_stack([np.ones(n_pop), x1])
    totals = aux.sum(axis=0)

    draws = rng.integers(0, big_m, size=m)
    rows = []
    slots = []
    for slot, j in enumerate(draws):
        members = np.nonzero(village_of == j)[0]
        picked = rng.choice(members, size=design.n_per_village, replace=False)
        rows.append(picked)
        slots.append(np.full(design.n_per_village, slot))
    rows = np.concatenate(rows)
    slots = np.concatenate(slots)

    v = np.full(m, design.n_per_village)
    big_v = sizes[draws]
    pi_within = (v / big_v)[slots]
    d = (big_m / m) / pi_within
    dw = DesignWeights(
        n_villages_total=big_m,
        sampled_villages=draws,
        village_census_sizes=big_v,
        village_respondents=v,
        respondent_slot=slots,
        pi_village=m / big_m,
        pi_within=pi_within,
        d=d,
    )
    xs = aux[rows]
    ys = y[rows]
    cal = calibrate_weights(d, xs, totals, columns=("intercept", "x1"))
    p_hat = ht_proportion(cal.w, ys, n_pop)
    se = calibration_variance(dw, xs[:, cal.kept], ys, divisor=divisor, n_population=n_pop)
    return p_hat, se**2


def calibration_variance_mc_check(
    n_redraws: int = 10_000, seed: int = 2024, tolerance: float = 0.10
) -> CheckResult:
    """Mean analytic variance vs the empirical variance over design redraws."""
    design = ToyDesign()
    x1, y, village_of = design.build()
    rng = np.random.default_rng(seed)
    p_hats = np.empty(n_redraws)
    var_hats = np.empty(n_redraws)
    for i in range(n_redraws):
        p_hats[i], var_hats[i] = toy_redraw_estimate(x1, y, village_of, design, rng)
    empirical = p_hats.var(ddof=1)
    ratio = var_hats.mean() / empirical
    passed = abs(ratio - 1.0) <= tolerance
    return CheckResult(
        "calibration variance vs Monte Carlo oracle",
        passed,
        f"mean analytic / empirical = {ratio:.4f} over {n_redraws} redraws",
    )


def imputation_variance_mc_check(
    n_redraws: int = 2000,
    seed: int = 2025,
    tolerance: float = 0.15,
    sandwich_scale: float | None = None,
) -> CheckResult:
    """Delta-method variance vs empirical variance under cluster resampling.

    Clusters are drawn fresh from a random-intercept superpopulation each
    redraw, which is the sampling model the cluster sandwich targets.
    `sandwich_scale` exists for fault injection in tests.
    """
    rng = np.random.default_rng(seed)
    n_clusters, cluster_size = 40, 15
    census_x1 = rng.normal(0.0, 1.0, 2000)
    x_pop = np.column_stack([np.ones(census_x1.shape[0]), census_x1])

    p_hats = np.empty(n_redraws)
    var_hats = np.empty(n_redraws)
    for i in range(n_redraws):
        shifts = rng.normal(0.0, 0.7, n_clusters)
        x1 = rng.normal(0.0, 1.0, n_clusters * cluster_size)
        clusters = np.repeat(np.arange(n_clusters), cluster_size)
        y = (rng.random(x1.shape[0]) < expit(0.3 + 0.8 * x1 + shifts[clusters])).astype(float)
        xs = np.column_stack([np.ones(x1.shape[0]), x1])
        fit = fit_logistic(xs, y)
        sigma = cluster_sandwich(fit, xs, y, clusters)
        if sandwich_scale is not None:
            sigma = sandwich_scale * sigma
        p_hats[i] = imputation_estimate(fit.beta, x_pop)
        grad = imputation_gradient(fit.beta, x_pop)
        var_hats[i] = float(grad @ sigma @ grad)
    ratio = var_hats.mean() / p_hats.var(ddof=1)
    passed = abs(ratio - 1.0) <= tolerance
    return CheckResult(
        "imputation variance vs Monte Carlo oracle",
        passed,
        f"mean analytic / empirical = {ratio:.4f} over {n_redraws} redraws",
    )


# ---------------------------------------------------------------------------
# Remaining checks


def random_calibration_instance(rng, n=None, p=None):
    n = n if n is not None else int(rng.integers(12, 40))
    p = p if p is not None else int(rng.integers(2, 5))
    x = np.column_stack([np.ones(n), rng.normal(0.0, 1.0, (n, p - 1))])
    d = rng.uniform(0.5, 6.0, n)
    # Totals from a jittered pseudo-population so lambda != 0.
    totals = x.T @ d * rng.uniform(0.8, 1.3, p)
    return d, x, totals


def calibration_kkt_check(n_instances: int = 50, seed: int = 11) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        d, x, totals = random_calibration_instance(rng)
        cols = tuple(f"c{i}" for i in range(x.shape[1]))
        cal = calibrate_weights(d, x, totals, columns=cols)
        w_oracle = kkt_calibration_oracle(d, x, totals)
        worst = max(worst, float(np.abs(cal.w - w_oracle).max()))
    return CheckResult(
        "calibration weights vs KKT oracle",
        worst < 1e-8,
        f"max abs weight difference {worst:.3e} over {n_instances} instances",
    )


def calibration_constraint_check(n_instances: int = 50, seed: int = 12) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        d, x, totals = random_calibration_instance(rng)
        cols = tuple(f"c{i}" for i in range(x.shape[1]))
        cal = calibrate_weights(d, x, totals, columns=cols)
        worst = max(worst, cal.constraint_residual)
    return CheckResult(
        "calibration constraints",
        worst < 1e-8,
        f"max relative constraint residual {worst:.3e}",
    )


def logistic_newton_check(n_instances: int = 10, seed: int = 13) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(80, 200))
        x = np.column_stack([np.ones(n), rng.normal(0.0, 1.0, (n, 2))])
        beta_true = rng.normal(0.0, 0.8, 3)
        y = (rng.random(n) < expit(x @ beta_true)).astype(float)
        if y.min() == y.max():
            continue
        fit = fit_logistic(x, y)
        oracle = newton_logistic_oracle(x, y)
        worst = max(worst, float(np.abs(fit.beta - oracle).max()))
    return CheckResult(
        "logistic fit vs Newton oracle",
        worst < 1e-6,
        f"max abs coefficient difference {worst:.3e}",
    )


def delta_gradient_check(seed: int = 14) -> CheckResult:
    rng = np.random.default_rng(seed)
    x_pop = np.column_stack([np.ones(500), rng.normal(0.0, 1.0, (500, 3))])
    worst = 0.0
    for _ in range(5):
        beta = rng.normal(0.0, 0.7, 4)
        grad = imputation_gradient(beta, x_pop)
        fd = finite_difference_gradient(beta, x_pop)
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-12)
        worst = max(worst, float(rel.max()))
    return CheckResult(
        "delta-method gradient vs finite differences",
        worst < 1e-4,
        f"max componentwise relative error {worst:.3e}",
    )


def _small_census() -> tuple[Population, AuxiliaryMatrix]:
    cfg = PopulationConfig(n_villages=40, mean_children_per_village=12.0, rng_seed=5)
    oc = OutcomeCoefficients(beta0=1.0, sigma2=icc_to_variance(1.0 / 3.0))
    pop = synthesize_population(cfg)
    rng = np.random.default_rng(55)
    pop = generate_baseline(pop, oc, rng)
    return pop, build_auxiliary(pop)


def census_identity_check() -> CheckResult:
    """Full census (all villages, full attendance): both methods recover truth."""
    pop, aux = _small_census()
    rng = np.random.default_rng(99)
    y1 = (rng.random(pop.n_children) < expit(0.4 + pop.baseline_offset() * 0.5)).astype(bool)
    p_true = float(y1.mean())
    sampled = np.arange(pop.n_villages)
    respondents = np.arange(pop.n_children)
    res_cal = estimate_calibrated(pop, aux, sampled, respondents, y1)
    res_imp = estimate_imputation(pop, aux, sampled, respondents, y1)
    err_cal = abs(res_cal.p_hat - p_true)
    err_imp = abs(res_imp.p_hat - p_true)
    return CheckResult(
        "census identities (both methods recover the true proportion)",
        err_cal < 1e-12 and err_imp < 1e-8,
        f"calibrated error {err_cal:.2e}, imputation error {err_imp:.2e}",
    )


def run_all_checks(fast: bool = False) -> list[CheckResult]:
    """The full oracle suite; `fast` trims the Monte Carlo redraw counts."""
    redraws_cal = 2000 if fast else 10_000
    redraws_imp = 500 if fast else 2000
    return [
        calibration_constraint_check(),
        calibration_kkt_check(),
        logistic_newton_check(),
        delta_gradient_check(),
        census_identity_check(),
        calibration_variance_mc_check(n_redraws=redraws_cal),
        imputation_variance_mc_check(n_redraws=redraws_imp),
    ]


# ---------------------------------------------------------------------------
# Single-shot estimation on a dumped census+realization CSV

REALIZATION_CSV_COLUMNS = [
    "child_id",
    "village_id",
    "age_months",
    "child_male",
    "guardian_age_yr",
    "guardian_male",
    "village_n_children",
    "village_population_scaled",
    "village_distance_km",
    "village_baseline_vaccinated",
    "village_baseline_logodds",
    "y1",
    "attended",
    "village_sampled",
]


def dump_realization_csv(pop: Population, real, path: str | Path) -> None:
    """Census rows with the replicate's outcomes, attendance, and sample flags."""
    sampled = np.zeros(pop.n_villages, dtype=bool)
    sampled[real.sampled_villages] = True
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REALIZATION_CSV_COLUMNS)
        for i in range(pop.n_children):
            j = int(pop.child_village[i])
            writer.writerow(
                [
                    i,
                    j,
                    int(pop.child_age_months[i]),
                    int(pop.child_male[i]),
                    repr(float(pop.guardian_age_yr[i])),
                    int(pop.guardian_male[i]),
                    int(pop.village_n_children[j]),
                    repr(float(pop.village_population_scaled[j])),
                    repr(float(pop.village_distance_km[j])),
                    int(pop.village_baseline_vaccinated[j]),
                    repr(float(pop.village_baseline_logodds[j])),
                    int(real.y1[i]),
                    int(real.attended[i]),
                    int(sampled[j]),
                ]
            )


def load_realization_csv(path: str | Path):
    """Rebuild (Population, y1, attended, sampled_villages, respondents) from a dump."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append(row)
    if not rows:
        raise ValueError(f"realization file {path} is empty")
    n = len(rows)
    village_ids = sorted({int(r["village_id"]) for r in rows})
    remap = {vid: k for k, vid in enumerate(village_ids)}
    m = len(village_ids)

    v_n = np.zeros(m, dtype=np.int64)
    v_pop = np.zeros(m)
    v_dist = np.zeros(m)
    v_base = np.zeros(m, dtype=np.int64)
    v_lodds = np.zeros(m)
    v_sampled = np.zeros(m, dtype=bool)
    child_village = np.zeros(n, dtype=np.int64)
    age = np.zeros(n, dtype=np.int64)
    cmale = np.zeros(n, dtype=bool)
    gage = np.zeros(n)
    gmale = np.zeros(n, dtype=bool)
    y1 = np.zeros(n, dtype=bool)
    attended = np.zeros(n, dtype=bool)

    for i, r in enumerate(rows):
        k = remap[int(r["village_id"])]
        child_village[i] = k
        age[i] = int(r["age_months"])
        cmale[i] = r["child_male"] == "1"
        gage[i] = float(r["guardian_age_yr"])
        gmale[i] = r["guardian_male"] == "1"
        y1[i] = r["y1"] == "1"
        attended[i] = r["attended"] == "1"
        v_n[k] = int(r["village_n_children"])
        v_pop[k] = float(r["village_population_scaled"])
        v_dist[k] = float(r["village_distance_km"])
        v_base[k] = int(r["village_baseline_vaccinated"])
        v_lodds[k] = float(r["village_baseline_logodds"])
        v_sampled[k] = r["village_sampled"] == "1"

    pop = Population(
        village_n_children=v_n,
        village_population_scaled=v_pop,
        village_distance_km=v_dist,
        child_village=child_village,
        child_age_months=age,
        child_male=cmale,
        guardian_age_yr=gage,
        guardian_male=gmale,
        village_baseline_vaccinated=v_base,
        village_baseline_logodds=v_lodds,
    )
    pop.validate()
    sampled_villages = np.nonzero(v_sampled)[0]
    respondents = np.nonzero(attended & v_sampled[child_village])[0]
    return pop, y1, attended, sampled_villages, respondents


def estimate_from_csv(path: str | Path, options: EstimatorOptions = EstimatorOptions()):
    """Run both estimators once on a dumped realization; returns results + truth."""
    pop, y1, attended, sampled_villages, respondents = load_realization_csv(path)
    aux = build_auxiliary(pop)
    res_cal = estimate_calibrated(pop, aux, sampled_villages, respondents, y1, options)
    res_imp = estimate_imputation(pop, aux, sampled_villages, respondents, y1, options)
    return res_cal, res_imp, float(y1.mean())
