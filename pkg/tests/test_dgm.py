import dataclasses
import math

import numpy as np
import pytest
from scipy.special import expit, logit

from anchorsim.config import (
    ConfigError,
    OutcomeCoefficients,
    SelectionCoefficients,
    TuningConfig,
    icc_to_variance,
)
from anchorsim.dgm import (
    draw_sample,
    generate_attendance,
    generate_followup,
    tune_followup_intercept,
    tune_gamma0,
    village_mean_rate,
)
from anchorsim.population import Population


def flat_population(n_villages=100, children_per_village=100, offset=0.0):
    """All covariates zeroed so only intercepts and offsets act."""
    n = n_villages * children_per_village
    return Population(
        village_n_children=np.full(n_villages, children_per_village, dtype=np.int64),
        village_population_scaled=np.zeros(n_villages),
        village_distance_km=np.zeros(n_villages),
        child_village=np.repeat(np.arange(n_villages), children_per_village),
        child_age_months=np.zeros(n, dtype=np.int64),
        child_male=np.zeros(n, dtype=bool),
        guardian_age_yr=np.zeros(n),
        guardian_male=np.zeros(n, dtype=bool),
        village_baseline_vaccinated=np.full(n_villages, children_per_village // 2),
        village_baseline_logodds=np.full(n_villages, offset),
    )


ZERO_OC = OutcomeCoefficients(
    beta0=0.0, beta_pop=0, beta_dist=0, beta_child_age=0,
    beta_guardian_age=0, beta_child_male=0, beta_guardian_male=0, sigma2=0.0,
)
ZERO_SC = SelectionCoefficients(
    gamma0=0.0, gamma_pop=0, gamma_dist=0, gamma_child_age=0,
    gamma_guardian_age=0, gamma_child_male=0, gamma_guardian_male=0, tau2=0.0, xi=1.0,
)


class TestFollowup:
    def test_all_zero_gives_half(self):
        pop = flat_population()
        y1, p_true = generate_followup(pop, ZERO_OC, np.random.default_rng(0))
        n = pop.n_children
        assert abs(p_true - 0.5) < 3 * math.sqrt(0.25 / n)

    def test_offset_passthrough(self):
        pop = flat_population(n_villages=1, children_per_village=20000, offset=logit(0.9))
        y1, p_true = generate_followup(pop, ZERO_OC, np.random.default_rng(1))
        assert abs(p_true - 0.9) < 3 * math.sqrt(0.09 / pop.n_children)

    def test_p_true_is_exact_mean(self, small_pop):
        oc = OutcomeCoefficients(sigma2=icc_to_variance(1 / 3))
        y1, p_true = generate_followup(small_pop, oc, np.random.default_rng(2))
        assert p_true == float(np.sum(y1)) / small_pop.n_children

    def test_tuned_intercept_hits_target(self, default_pop):
        oc = OutcomeCoefficients(sigma2=icc_to_variance(1 / 3))
        b0 = tune_followup_intercept(default_pop, oc, 0.73)
        oc = OutcomeCoefficients(beta0=b0, sigma2=oc.sigma2)
        rng = np.random.default_rng(3)
        p = [generate_followup(default_pop, oc, rng)[1] for _ in range(100)]
        assert abs(np.mean(p) - 0.73) < 0.01

    def test_fresh_intercepts_each_replicate(self):
        pop = flat_population(n_villages=1, children_per_village=2000)
        oc = OutcomeCoefficients(
            beta0=0.0, beta_pop=0, beta_dist=0, beta_child_age=0,
            beta_guardian_age=0, beta_child_male=0, beta_guardian_male=0, sigma2=1.0,
        )
        rng = np.random.default_rng(4)
        rates = [generate_followup(pop, oc, rng)[1] for _ in range(100)]
        # Across-replicate variance reflects the redrawn intercept, far above
        # the binomial-only level of a frozen intercept.
        assert np.var(rates, ddof=1) > 3 * 0.25 / 2000


class TestAttendance:
    def test_ignorable_symmetric(self):
        pop = flat_population()
        y1 = np.zeros(pop.n_children, dtype=bool)
        y1[::2] = True
        att = generate_attendance(pop, y1, ZERO_SC, np.random.default_rng(5))
        n = pop.n_children
        assert abs(att.mean() - 0.5) < 3 * math.sqrt(0.25 / n)
        # No dependence on y1 under xi=1.
        assert abs(att[y1].mean() - att[~y1].mean()) < 4 * math.sqrt(0.25 / (n / 2))

    def test_xi_odds_ratio_exact(self):
        pop = flat_population(n_villages=1, children_per_village=200000)
        y1 = np.ones(pop.n_children, dtype=bool)
        sc = dataclasses.replace(ZERO_SC, xi=1.5)
        att = generate_attendance(pop, y1, sc, np.random.default_rng(6))
        # expit(log 1.5) = 0.6 exactly
        assert expit(math.log(1.5)) == pytest.approx(0.6, abs=1e-12)
        assert abs(att.mean() - 0.6) < 3 * math.sqrt(0.24 / pop.n_children)

    def test_xi_acts_only_through_positive_outcomes(self):
        pop = flat_population()
        y1 = np.zeros(pop.n_children, dtype=bool)
        sc15 = dataclasses.replace(ZERO_SC, xi=1.5)
        a = generate_attendance(pop, y1, ZERO_SC, np.random.default_rng(7))
        b = generate_attendance(pop, y1, sc15, np.random.default_rng(7))
        assert np.array_equal(a, b)

    def test_factorization_under_ignorability(self):
        pop = flat_population(n_villages=100, children_per_village=1000)  # 1e5 children
        rng = np.random.default_rng(8)
        y1, _ = generate_followup(pop, ZERO_OC, rng)
        att = generate_attendance(pop, y1, ZERO_SC, rng)
        corr = np.corrcoef(y1.astype(float), att.astype(float))[0, 1]
        assert abs(corr) < 3 / math.sqrt(pop.n_children)

    def test_monotone_in_gamma0(self):
        pop = flat_population(n_villages=50, children_per_village=40)
        sel_lp = np.zeros(pop.n_children)
        rates = []
        for g0 in (-2.0, -1.0, 0.0, 1.0, 2.0):
            sc = dataclasses.replace(ZERO_SC, gamma0=g0, tau2=0.5)
            vals = []
            for rep in range(20):
                rng = np.random.default_rng(100 + rep)  # common draws across g0
                y1, _ = generate_followup(pop, ZERO_OC, rng)
                att = generate_attendance(pop, y1, sc, rng, fixed_lp=sel_lp)
                vals.append(village_mean_rate(pop, att.astype(float)))
            rates.append(np.mean(vals))
        assert all(a <= b for a, b in zip(rates, rates[1:]))


class TestDrawSample:
    def test_full_fraction(self, small_pop):
        attended = np.ones(small_pop.n_children, dtype=bool)
        sampled, resp = draw_sample(small_pop, attended, 1.0, np.random.default_rng(9))
        assert sampled.shape[0] == small_pop.n_villages
        assert resp.shape[0] == small_pop.n_children

    def test_quarter_of_381(self, default_pop):
        attended = np.ones(default_pop.n_children, dtype=bool)
        sampled, _ = draw_sample(default_pop, attended, 0.25, np.random.default_rng(10))
        assert sampled.shape[0] == 95  # round(0.25 * 381)

    def test_respondents_only_in_sampled_villages(self, small_pop):
        rng = np.random.default_rng(11)
        attended = rng.random(small_pop.n_children) < 0.5
        sampled, resp = draw_sample(small_pop, attended, 0.3, rng)
        in_sample = np.zeros(small_pop.n_villages, dtype=bool)
        in_sample[sampled] = True
        assert np.all(in_sample[small_pop.child_village[resp]])
        assert np.all(attended[resp])

    def test_zero_villages_is_config_error(self, small_pop):
        attended = np.ones(small_pop.n_children, dtype=bool)
        with pytest.raises(ConfigError):
            draw_sample(small_pop, attended, 0.001, np.random.default_rng(12))

    def test_no_attendance_gives_empty_respondents(self, small_pop):
        attended = np.zeros(small_pop.n_children, dtype=bool)
        _, resp = draw_sample(small_pop, attended, 0.5, np.random.default_rng(13))
        assert resp.size == 0


class TestTuneGamma0:
    def test_homogeneous_half(self):
        pop = flat_population(n_villages=60, children_per_village=30)
        g0, achieved, _ = tune_gamma0(
            pop, ZERO_OC, ZERO_SC, 0.5, TuningConfig(), np.random.default_rng(14)
        )
        assert abs(g0) <= 0.02
        assert abs(achieved - 0.5) <= 0.005

    def test_homogeneous_eighty_percent(self):
        pop = flat_population(n_villages=60, children_per_village=30)
        g0, achieved, _ = tune_gamma0(
            pop, ZERO_OC, ZERO_SC, 0.8, TuningConfig(), np.random.default_rng(15)
        )
        assert g0 == pytest.approx(logit(0.8), abs=0.02)

    def test_defaults_self_consistency(self, default_pop):
        oc = OutcomeCoefficients(sigma2=icc_to_variance(1 / 3))
        sc = SelectionCoefficients(xi=1.2)
        g0, achieved, iters = tune_gamma0(
            default_pop, oc, sc, 0.65, TuningConfig(), np.random.default_rng(16)
        )
        assert iters <= 30
        assert abs(achieved - 0.65) <= 0.005
        # Re-simulate with fresh randomness: realized village-mean attendance
        # should reproduce the target.
        sc = dataclasses.replace(sc, gamma0=g0)
        rng = np.random.default_rng(17)
        rates = []
        for _ in range(50):
            y1, _ = generate_followup(default_pop, oc, rng)
            att = generate_attendance(default_pop, y1, sc, rng)
            rates.append(village_mean_rate(default_pop, att.astype(float)))
        assert abs(np.mean(rates) - 0.65) < 0.01
