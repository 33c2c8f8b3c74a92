"""Synthetic finite population: villages, children, and the baseline vaccination census."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .config import ConfigError, OutcomeCoefficients, PopulationConfig, icc_to_variance

__all__ = [
    "Population",
    "TuningError",
    "icc_to_variance",
    "synthesize_population",
    "generate_baseline",
    "tune_baseline_intercept",
    "expected_rate",
    "bisect_monotone",
    "dump_population_csv",
]


class TuningError(RuntimeError):
    """An intercept tuner could not reach the target within its bracket."""


def require_sigma2(coeffs) -> float:
    """Outcome sigma2 may be deferred to the population ICC; insist it is resolved."""
    if coeffs.sigma2 is None:
        raise ConfigError("outcome sigma2 is unresolved; apply config.resolve_outcome first")
    return coeffs.sigma2


@dataclass(frozen=True)
class Population:
    """Columnar census: village attributes plus one row per child.

    Baseline fields are None until `generate_baseline` fills them; everything
    is immutable afterwards, so populations can be shared across workers.
    """

    village_n_children: np.ndarray
    village_population_scaled: np.ndarray
    village_distance_km: np.ndarray
    child_village: np.ndarray
    child_age_months: np.ndarray
    child_male: np.ndarray
    guardian_age_yr: np.ndarray
    guardian_male: np.ndarray
    village_baseline_vaccinated: np.ndarray | None = None
    village_baseline_logodds: np.ndarray | None = None

    @property
    def n_villages(self) -> int:
        return self.village_n_children.shape[0]

    @property
    def n_children(self) -> int:
        return self.child_village.shape[0]

    @property
    def has_baseline(self) -> bool:
        return self.village_baseline_logodds is not None

    def covariates(self) -> np.ndarray:
        """Child-level covariate matrix in canonical order.

        Columns: population_scaled, distance_km, child_age_months,
        guardian_age_yr, child_male, guardian_male (village attributes are
        broadcast to children).
        """
        v = self.child_village
        return np.column_stack(
            [
                self.village_population_scaled[v],
                self.village_distance_km[v],
                self.child_age_months.astype(float),
                self.guardian_age_yr,
                self.child_male.astype(float),
                self.guardian_male.astype(float),
            ]
        )

    def baseline_offset(self) -> np.ndarray:
        """Per-child baseline log-odds offset (village value broadcast)."""
        if not self.has_baseline:
            raise ValueError("baseline has not been generated")
        return self.village_baseline_logodds[self.child_village]

    def validate(self) -> None:
        counts = np.bincount(self.child_village, minlength=self.n_villages)
        if not np.array_equal(counts, self.village_n_children):
            raise AssertionError("per-village child counts do not match n_children")
        if self.child_village.min() < 0 or self.child_village.max() >= self.n_villages:
            raise AssertionError("child references a nonexistent village")
        if self.has_baseline:
            y0 = self.village_baseline_vaccinated
            if np.any(y0 < 0) or np.any(y0 > self.village_n_children):
                raise AssertionError("baseline counts out of range")
            if not np.all(np.isfinite(self.village_baseline_logodds)):
                raise AssertionError("baseline log-odds must be finite")


def _truncated_negative_binomial(rng, mean, dispersion, minimum, size):
    # Rejection below the floor keeps the count-distribution shape intact.
    p = dispersion / (dispersion + mean)
    out = rng.negative_binomial(dispersion, p, size=size)
    bad = out < minimum
    while bad.any():
        out[bad] = rng.negative_binomial(dispersion, p, size=int(bad.sum()))
        bad = out < minimum
    return out


def _truncated(draw, low, high, size):
    out = draw(size)
    bad = (out < low) | (out > high)
    while bad.any():
        out[bad] = draw(int(bad.sum()))
        bad = (out < low) | (out > high)
    return out


def synthesize_population(cfg: PopulationConfig) -> Population:
    """Draw a census-like population; deterministic given cfg.rng_seed."""
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.rng_seed, spawn_key=(0,)))

    sizes = _truncated_negative_binomial(
        rng,
        cfg.mean_children_per_village,
        cfg.village_size_dispersion,
        cfg.min_children_per_village,
        cfg.n_villages,
    )
    distances = _truncated(
        lambda n: rng.exponential(cfg.distance_mean_km, size=n),
        0.0,
        cfg.distance_max_km,
        cfg.n_villages,
    )
    # The census covariate is the centred/scaled village size; child counts are
    # the only population measure the synthetic census carries.
    scale = sizes.std()
    pop_scaled = (sizes - sizes.mean()) / (scale if scale > 0 else 1.0)

    n = int(sizes.sum())
    child_village = np.repeat(np.arange(cfg.n_villages), sizes)
    lo, hi = cfg.child_age_range_months
    ages = rng.integers(lo, hi + 1, size=n)
    child_male = rng.random(n) < cfg.child_male_prob
    guardian_age = _truncated(
        lambda k: rng.normal(cfg.guardian_age_mean_yr, cfg.guardian_age_sd_yr, size=k),
        cfg.guardian_age_range_yr[0],
        cfg.guardian_age_range_yr[1],
        n,
    )
    guardian_male = rng.random(n) < cfg.guardian_male_prob

    pop = Population(
        village_n_children=sizes.astype(np.int64),
        village_population_scaled=pop_scaled.astype(float),
        village_distance_km=distances.astype(float),
        child_village=child_village.astype(np.int64),
        child_age_months=ages.astype(np.int64),
        child_male=child_male,
        guardian_age_yr=guardian_age.astype(float),
        guardian_male=guardian_male,
    )
    pop.validate()
    return pop


def expected_rate(lp_fixed: np.ndarray, sigma2: float, n_nodes: int = 31) -> float:
    """Population-expected Bernoulli rate, marginal over a N(0, sigma2) intercept.

    Gauss-Hermite quadrature of E[expit(lp + s*Z)] per child; exact as far as
    the tuners need, and deterministic, unlike replicate averaging.
    """
    if sigma2 <= 0.0:
        return float(np.mean(expit(lp_fixed)))
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    shift = math.sqrt(2.0 * sigma2) * nodes
    w = weights / math.sqrt(math.pi)
    return float(np.mean(expit(lp_fixed[:, None] + shift[None, :]) @ w))


def bisect_monotone(fn, target, bracket, tol, max_iter=100):
    """Bisection for an increasing fn; returns (x, fn(x), iterations).

    Raises TuningError, reporting the endpoint values, when the target is not
    bracketed.
    """
    lo, hi = bracket
    f_lo, f_hi = fn(lo), fn(hi)
    if not (f_lo <= target <= f_hi):
        raise TuningError(
            f"target {target:.4f} not bracketed: fn({lo})={f_lo:.4f}, fn({hi})={f_hi:.4f}"
        )
    x, fx = lo, f_lo
    for it in range(1, max_iter + 1):
        x = 0.5 * (lo + hi)
        fx = fn(x)
        if abs(fx - target) <= tol and hi - lo < 1e-6 * max(1.0, abs(x)):
            return x, fx, it
        if fx < target:
            lo = x
        else:
            hi = x
    if abs(fx - target) > tol:
        raise TuningError(f"no convergence after {max_iter} iterations: fn({x})={fx:.4f}")
    return x, fx, max_iter


def tune_baseline_intercept(
    pop: Population, coeffs: OutcomeCoefficients, target_rate: float, tol: float = 0.005
) -> float:
    """Intercept at which the expected baseline vaccination rate hits the target."""
    if not 0.0 < target_rate < 1.0:
        raise ConfigError("target rate must lie in (0, 1)")
    sigma2 = require_sigma2(coeffs)
    lp_slope = pop.covariates() @ np.asarray(coeffs.slopes())
    b0, _, _ = bisect_monotone(
        lambda b: expected_rate(b + lp_slope, sigma2),
        target_rate,
        (-10.0, 10.0),
        min(tol, 1e-4),
    )
    return b0


def generate_baseline(pop: Population, coeffs: OutcomeCoefficients, rng) -> Population:
    """Draw per-child baseline vaccination and derive village offsets.

    The offset is the continuity-corrected log-odds log((Y+0.5)/(K-Y+0.5)),
    finite even for all-or-none villages.
    """
    alpha = rng.normal(0.0, math.sqrt(require_sigma2(coeffs)), size=pop.n_villages)
    lp = coeffs.beta0 + pop.covariates() @ np.asarray(coeffs.slopes())
    lp += alpha[pop.child_village]
    y0 = rng.random(pop.n_children) < expit(lp)
    counts = np.bincount(pop.child_village[y0], minlength=pop.n_villages).astype(np.int64)
    k = pop.village_n_children
    logodds = np.log((counts + 0.5) / (k - counts + 0.5))
    out = replace(pop, village_baseline_vaccinated=counts, village_baseline_logodds=logodds)
    out.validate()
    return out


POPULATION_CSV_COLUMNS = [
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
]


def dump_population_csv(pop: Population, path: str | Path) -> None:
    """One row per child with village attributes joined; debugging aid."""
    v = pop.child_village
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(POPULATION_CSV_COLUMNS)
        for i in range(pop.n_children):
            j = int(v[i])
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
                    int(pop.village_baseline_vaccinated[j]) if pop.has_baseline else "",
                    repr(float(pop.village_baseline_logodds[j])) if pop.has_baseline else "",
                ]
            )
