"""Pydantic request/response schemas for the HTTP service.

Defaults mirror the library dataclasses so one source of truth governs both
surfaces.
"""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..config import (
    GridConfig,
    OutcomeCoefficients,
    PopulationConfig,
    RunConfig,
    SelectionCoefficients,
    TuningConfig,
)

_POP = PopulationConfig()
_OUT = OutcomeCoefficients()
_SEL = SelectionCoefficients()
_GRID = GridConfig()
_TUNE = TuningConfig()
_RUN = RunConfig()


class PopulationModel(BaseModel):
    n_villages: int = Field(default=_POP.n_villages, ge=1)
    min_children_per_village: int = Field(default=_POP.min_children_per_village, ge=1)
    mean_children_per_village: float = _POP.mean_children_per_village
    village_size_dispersion: float = Field(default=_POP.village_size_dispersion, gt=0)
    distance_mean_km: float = Field(default=_POP.distance_mean_km, gt=0)
    distance_max_km: float = Field(default=_POP.distance_max_km, gt=0)
    child_age_range_months: tuple[int, int] = _POP.child_age_range_months
    child_male_prob: float = Field(default=_POP.child_male_prob, ge=0, le=1)
    guardian_male_prob: float = Field(default=_POP.guardian_male_prob, ge=0, le=1)
    guardian_age_mean_yr: float = _POP.guardian_age_mean_yr
    guardian_age_sd_yr: float = Field(default=_POP.guardian_age_sd_yr, gt=0)
    guardian_age_range_yr: tuple[float, float] = _POP.guardian_age_range_yr
    baseline_target_rate: float = Field(default=_POP.baseline_target_rate, ge=0, le=1)
    icc_vaccination: float = Field(default=_POP.icc_vaccination, gt=0, lt=1)
    rng_seed: int = _POP.rng_seed


class OutcomeModel(BaseModel):
    beta0: float = _OUT.beta0
    beta_pop: float = _OUT.beta_pop
    beta_dist: float = _OUT.beta_dist
    beta_child_age: float = _OUT.beta_child_age
    beta_guardian_age: float = _OUT.beta_guardian_age
    beta_child_male: float = _OUT.beta_child_male
    beta_guardian_male: float = _OUT.beta_guardian_male
    sigma2: float | None = Field(default=_OUT.sigma2, ge=0)


class SelectionModel(BaseModel):
    gamma0: float = _SEL.gamma0
    gamma_pop: float = _SEL.gamma_pop
    gamma_dist: float = _SEL.gamma_dist
    gamma_child_age: float = _SEL.gamma_child_age
    gamma_guardian_age: float = _SEL.gamma_guardian_age
    gamma_child_male: float = _SEL.gamma_child_male
    gamma_guardian_male: float = _SEL.gamma_guardian_male
    tau2: float = Field(default=_SEL.tau2, ge=0)
    xi: float = Field(default=_SEL.xi, gt=0)


class GridModel(BaseModel):
    village_fractions: tuple[float, ...] = _GRID.village_fractions
    response_rates: tuple[float, ...] = _GRID.response_rates
    xis: tuple[float, ...] = _GRID.xis


class TuningModel(BaseModel):
    n_draws: int = Field(default=_TUNE.n_draws, ge=1)
    tolerance: float = Field(default=_TUNE.tolerance, gt=0)
    max_iter: int = Field(default=_TUNE.max_iter, ge=1)
    bracket: tuple[float, float] = _TUNE.bracket


class RunConfigModel(BaseModel):
    population: PopulationModel = PopulationModel()
    outcome: OutcomeModel = OutcomeModel()
    selection: SelectionModel = SelectionModel()
    grid: GridModel = GridModel()
    tuning: TuningModel = TuningModel()
    n_rep: int = Field(default=_RUN.n_rep, ge=1)
    master_seed: int = _RUN.master_seed
    workers: int = Field(default=_RUN.workers, ge=0)
    population_redraw_per_replicate: bool = _RUN.population_redraw_per_replicate
    tune_followup_intercept: bool = _RUN.tune_followup_intercept
    followup_target_rate: float | None = _RUN.followup_target_rate
    response_rate_weighting: str = _RUN.response_rate_weighting
    sandwich_small_sample: bool = _RUN.sandwich_small_sample
    calibration_variance_divisor: str = _RUN.calibration_variance_divisor


class RunRequest(BaseModel):
    config: RunConfigModel = RunConfigModel()
    scenario_ids: list[str] | None = None


class RunSubmitted(BaseModel):
    run_id: str


class RunStatus(BaseModel):
    run_id: str
    state: str  # pending | running | done | failed
    config_hash: str
    scenarios_done: int
    scenarios_total: int
    error: str | None = None


class SummaryRow(BaseModel):
    scenario_id: str
    village_fraction: float
    response_rate: float
    xi: float
    method: str
    n_rep_effective: int
    failure_count: int
    bias: float
    bias_mcse: float
    coverage: float
    coverage_mcse: float
    equiv05: float
    equiv05_mcse: float
    equiv075: float
    equiv075_mcse: float
    mean_se: float


class TuneRequest(BaseModel):
    config: RunConfigModel = RunConfigModel()


class TunedPair(BaseModel):
    response_rate: float
    xi: float
    gamma0: float
    achieved_rate: float
    iterations: int


class TuneResponse(BaseModel):
    config_hash: str
    pairs: dict[str, TunedPair]


class ReplicateRequest(BaseModel):
    """Single-shot debug replicate: explicit scenario parameters, no tuning."""

    config: RunConfigModel = RunConfigModel()
    village_fraction: float = Field(default=0.5, gt=0, le=1)
    xi: float = Field(default=1.0, gt=0)
    gamma0: float = 0.0
    rep_index: int = Field(default=0, ge=0)


class EstimateModel(BaseModel):
    method: str
    failed: bool = False
    failure_reason: str | None = None
    p_hat: float | None = None
    se: float | None = None
    ci95: tuple[float, float] | None = None
    ci90: tuple[float, float] | None = None


class ReplicateResponse(BaseModel):
    p_true: float
    n_respondents: int
    m_villages: int
    results: list[EstimateModel]


class HealthResponse(BaseModel):
    status: str
    version: str
