"""Census-anchored convenience-survey simulation and estimation."""

__version__ = "0.1.0"

from .config import (
    ConfigError,
    GridConfig,
    OutcomeCoefficients,
    PopulationConfig,
    RunConfig,
    SelectionCoefficients,
    TuningConfig,
    icc_to_variance,
    load_run_config,
)
from .dgm import Realization, Scenario
from .estimators import EstimateResult, EstimationError
from .metrics import ReplicateRecord, ScenarioSummary
from .population import Population, TuningError

__all__ = [
    "ConfigError",
    "EstimateResult",
    "EstimationError",
    "GridConfig",
    "OutcomeCoefficients",
    "Population",
    "PopulationConfig",
    "Realization",
    "ReplicateRecord",
    "RunConfig",
    "Scenario",
    "ScenarioSummary",
    "SelectionCoefficients",
    "TuningConfig",
    "TuningError",
    "icc_to_variance",
    "load_run_config",
    "__version__",
]
