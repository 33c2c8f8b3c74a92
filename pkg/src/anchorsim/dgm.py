"""Per-replicate data generation: follow-up outcomes, attendance, and the realized sample."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .config import ConfigError, OutcomeCoefficients, SelectionCoefficients, TuningConfig
from .population import (
    Population,
    TuningError,
    bisect_monotone,
    expected_rate,
    require_sigma2,
)

__all__ = [
    "Scenario",
    "Realization",
    "outcome_fixed_lp",
    "selection_fixed_lp",
    "generate_followup",
    "generate_attendance",
    "draw_sample",
    "tune_followup_intercept",
    "tune_gamma0",
]


@dataclass(frozen=True)
class Scenario:
    """One cell of the factor grid, with its tuned selection intercept."""

    village_fraction: float
    response_rate_target: float
    xi: float
    gamma0_tuned: float = math.nan
    scenario_id: str = ""

    @staticmethod
    def make(village_fraction, response_rate_target, xi, gamma0_tuned=math.nan) -> "Scenario":
        sid = f"vf{village_fraction:.2f}_rr{response_rate_target:.2f}_xi{xi:.1f}"
        return Scenario(village_fraction, response_rate_target, xi, gamma0_tuned, sid)


@dataclass(frozen=True)
class Realization:
    """One replicate's simulated world plus the realized sample."""

    y1: np.ndarray  # follow-up vaccination per child
    attended: np.ndarray  # attendance indicator per child
    sampled_villages: np.ndarray  # village ids drawn at the first stage
    respondents: np.ndarray  # child indices: attendees inside sampled villages
    p_true: float  # exact finite-population proportion of y1


def outcome_fixed_lp(pop: Population, oc: OutcomeCoefficients) -> np.ndarray:
    """Fixed part of the follow-up linear predictor: effects plus baseline offset."""
    return oc.beta0 + pop.covariates() @ np.asarray(oc.slopes()) + pop.baseline_offset()


def selection_fixed_lp(pop: Population, sc: SelectionCoefficients) -> np.ndarray:
    """Attendance linear predictor without intercept, random effect, or the y1 term."""
    return pop.covariates() @ np.asarray(sc.slopes())


def generate_followup(
    pop: Population, oc: OutcomeCoefficients, rng, fixed_lp: np.ndarray | None = None
):
    """Draw follow-up vaccination; returns (y1, p_true).

    A fresh village intercept is drawn every call. `fixed_lp` may carry the
    precomputed covariate+offset part to avoid rebuilding it per replicate.
    """
    if fixed_lp is None:
        fixed_lp = outcome_fixed_lp(pop, oc)
    alpha = rng.normal(0.0, math.sqrt(require_sigma2(oc)), size=pop.n_villages)
    y1 = rng.random(pop.n_children) < expit(fixed_lp + alpha[pop.child_village])
    return y1, float(y1.mean())


def generate_attendance(
    pop: Population,
    y1: np.ndarray,
    sc: SelectionCoefficients,
    rng,
    fixed_lp: np.ndarray | None = None,
):
    """Draw per-child attendance; the outcome shifts the odds by a factor xi."""
    if fixed_lp is None:
        fixed_lp = selection_fixed_lp(pop, sc)
    mu = rng.normal(0.0, math.sqrt(sc.tau2), size=pop.n_villages)
    lp = sc.gamma0 + fixed_lp + mu[pop.child_village] + math.log(sc.xi) * y1
    return rng.random(pop.n_children) < expit(lp)


def draw_sample(pop: Population, attended: np.ndarray, village_fraction: float, rng):
    """First-stage SRSWOR of villages; respondents are attendees inside them.

    Sampled villages with zero attendees stay in the sample and simply
    contribute no second-stage units.
    """
    if not 0.0 < village_fraction <= 1.0:
        raise ConfigError(f"village fraction {village_fraction} out of (0, 1]")
    m = int(round(village_fraction * pop.n_villages))
    if m == 0:
        raise ConfigError(f"village fraction {village_fraction} samples zero villages")
    sampled = np.sort(rng.choice(pop.n_villages, size=m, replace=False))
    in_sample = np.zeros(pop.n_villages, dtype=bool)
    in_sample[sampled] = True
    respondents = np.nonzero(attended & in_sample[pop.child_village])[0]
    return sampled, respondents


def realize(pop, oc, sc, village_fraction, rng, outcome_lp=None, selection_lp=None) -> Realization:
    """Full generative pipeline for one replicate, in a fixed draw order."""
    y1, p_true = generate_followup(pop, oc, rng, fixed_lp=outcome_lp)
    attended = generate_attendance(pop, y1, sc, rng, fixed_lp=selection_lp)
    sampled, respondents = draw_sample(pop, attended, village_fraction, rng)
    return Realization(y1, attended, sampled, respondents, p_true)


def tune_followup_intercept(
    pop: Population, oc: OutcomeCoefficients, target_rate: float, tol: float = 0.005
) -> float:
    """Intercept making the expected follow-up prevalence hit the target.

    Works on the fixed census (baseline offsets included), marginalizing the
    fresh village intercept by quadrature.
    """
    if not pop.has_baseline:
        raise ValueError("baseline must be generated before tuning the follow-up intercept")
    sigma2 = require_sigma2(oc)
    base = pop.covariates() @ np.asarray(oc.slopes()) + pop.baseline_offset()
    b0, _, _ = bisect_monotone(
        lambda b: expected_rate(b + base, sigma2),
        target_rate,
        (-10.0, 10.0),
        min(tol, 1e-4),
    )
    return b0


def village_mean_rate(pop: Population, probs: np.ndarray, weighting: str = "village") -> float:
    """Attendance rate summary: unweighted mean of per-village rates, or child-level."""
    if weighting == "child":
        return float(probs.mean())
    sums = np.bincount(pop.child_village, weights=probs, minlength=pop.n_villages)
    return float(np.mean(sums / pop.village_n_children))


def tune_gamma0(
    pop: Population,
    oc: OutcomeCoefficients,
    sc: SelectionCoefficients,
    target_rate: float,
    tuning: TuningConfig,
    rng,
    weighting: str = "village",
    outcome_lp: np.ndarray | None = None,
):
    """Tune the selection intercept so the average village attendance rate hits target.

    Draws (village intercepts, outcomes) once, then bisects on the intercept
    against the conditional attendance probabilities averaged over those
    draws. Re-using the draws across evaluations makes the objective smooth
    and strictly increasing, so bisection is exact up to the draw noise.

    Returns (gamma0, achieved_rate, iterations).
    """
    if not 0.0 < target_rate < 1.0:
        raise ConfigError("target rate must lie in (0, 1)")
    if outcome_lp is None:
        outcome_lp = outcome_fixed_lp(pop, oc)
    sel_lp = selection_fixed_lp(pop, sc)
    log_xi = math.log(sc.xi)

    bases = []
    for _ in range(tuning.n_draws):
        y1, _ = generate_followup(pop, oc, rng, fixed_lp=outcome_lp)
        mu = rng.normal(0.0, math.sqrt(sc.tau2), size=pop.n_villages)
        bases.append(sel_lp + mu[pop.child_village] + log_xi * y1)
    base = np.stack(bases)

    def rate(g0: float) -> float:
        probs = expit(g0 + base)
        return float(np.mean([village_mean_rate(pop, row, weighting) for row in probs]))

    try:
        g0, achieved, iters = bisect_monotone(
            rate, target_rate, tuning.bracket, tuning.tolerance, tuning.max_iter
        )
    except TuningError as exc:
        raise TuningError(f"selection intercept for rate {target_rate}: {exc}") from exc
    return g0, achieved, iters
