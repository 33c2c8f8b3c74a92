import numpy as np
import pytest

from anchorsim.config import OutcomeCoefficients, PopulationConfig, icc_to_variance
from anchorsim.population import generate_baseline, synthesize_population


@pytest.fixture(scope="session")
def small_pop():
    """A 50-village census with baseline filled; shared read-only."""
    cfg = PopulationConfig(n_villages=50, mean_children_per_village=15.0, rng_seed=7)
    pop = synthesize_population(cfg)
    oc = OutcomeCoefficients(beta0=1.0, sigma2=icc_to_variance(1 / 3))
    return generate_baseline(pop, oc, np.random.default_rng(71))


@pytest.fixture(scope="session")
def default_pop():
    """Full-size census (381 villages) with baseline; shared read-only."""
    cfg = PopulationConfig(rng_seed=0)
    pop = synthesize_population(cfg)
    oc = OutcomeCoefficients(beta0=1.38, sigma2=icc_to_variance(1 / 3))
    return generate_baseline(pop, oc, np.random.default_rng(3))
