"""Run configuration: dataclasses, validation, YAML round-trip, content hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

PI2_OVER_3 = math.pi**2 / 3.0

DEFAULT_VILLAGE_FRACTIONS = (0.25, 0.50, 0.75)
DEFAULT_RESPONSE_RATES = (0.50, 0.65, 0.80)
DEFAULT_XIS = (1.0, 1.1, 1.2, 1.3, 1.4, 1.5)


class ConfigError(ValueError):
    """Invalid configuration value or file."""


def icc_to_variance(icc: float) -> float:
    """Random-intercept variance implied by a binary-outcome intra-cluster correlation.

    Inverts icc = s2 / (s2 + pi^2/3), giving s2 = icc * (pi^2/3) / (1 - icc).
    """
    if not 0.0 < icc < 1.0:
        raise ConfigError(f"icc must lie strictly in (0, 1), got {icc}")
    return icc * PI2_OVER_3 / (1.0 - icc)


def variance_to_icc(variance: float) -> float:
    """Intra-cluster correlation implied by a random-intercept variance."""
    if variance < 0.0:
        raise ConfigError(f"variance must be nonnegative, got {variance}")
    return variance / (variance + PI2_OVER_3)


@dataclass(frozen=True)
class PopulationConfig:
    """Knobs for synthesizing the census-like finite population."""

    n_villages: int = 381
    min_children_per_village: int = 5
    mean_children_per_village: float = 25.0
    village_size_dispersion: float = 25.0
    distance_mean_km: float = 5.0
    distance_max_km: float = 30.0
    child_age_range_months: tuple[int, int] = (12, 24)
    child_male_prob: float = 0.459
    guardian_male_prob: float = 0.070
    guardian_age_mean_yr: float = 29.4
    guardian_age_sd_yr: float = 9.68
    guardian_age_range_yr: tuple[float, float] = (15.0, 86.0)
    baseline_target_rate: float = 0.73
    icc_vaccination: float = 1.0 / 3.0
    rng_seed: int = 0

    def validate(self) -> None:
        if self.n_villages < 1:
            raise ConfigError("n_villages must be positive")
        if self.min_children_per_village < 1:
            raise ConfigError("min_children_per_village must be positive")
        if self.mean_children_per_village < self.min_children_per_village:
            raise ConfigError("mean_children_per_village must be >= min_children_per_village")
        if self.village_size_dispersion <= 0:
            raise ConfigError("village_size_dispersion must be positive")
        if self.distance_mean_km <= 0 or self.distance_max_km <= self.distance_mean_km * 0.1:
            raise ConfigError("distance parameters out of range")
        for name in ("child_male_prob", "guardian_male_prob", "baseline_target_rate"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be a probability, got {p}")
        lo, hi = self.child_age_range_months
        if lo >= hi:
            raise ConfigError("child_age_range_months must be ordered")
        alo, ahi = self.guardian_age_range_yr
        if alo >= ahi:
            raise ConfigError("guardian_age_range_yr must be ordered")
        if self.guardian_age_sd_yr <= 0:
            raise ConfigError("guardian_age_sd_yr must be positive")
        if not 0.0 < self.icc_vaccination < 1.0:
            raise ConfigError("icc_vaccination must lie in (0, 1)")


@dataclass(frozen=True)
class OutcomeCoefficients:
    """Log-odds effects of the follow-up vaccination model (and the baseline model).

    Defaults are the point estimates fitted to the real baseline census; the
    intercept is normally re-tuned so the expected prevalence hits the target.
    """

    beta0: float = 1.38
    beta_pop: float = 0.06
    beta_dist: float = -0.08
    beta_child_age: float = 0.01
    beta_guardian_age: float = 0.00
    beta_child_male: float = 0.07
    beta_guardian_male: float = -0.24
    # None defers to icc_to_variance(population.icc_vaccination) at run time.
    sigma2: float | None = None

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None and f.name == "sigma2":
                continue
            if not math.isfinite(v):
                raise ConfigError(f"outcome coefficient {f.name} must be finite")
        if self.sigma2 is not None and self.sigma2 < 0:
            raise ConfigError("sigma2 must be nonnegative")

    def slopes(self) -> tuple[float, ...]:
        """Covariate effects in aux-matrix column order (pop, dist, ages, genders)."""
        return (
            self.beta_pop,
            self.beta_dist,
            self.beta_child_age,
            self.beta_guardian_age,
            self.beta_child_male,
            self.beta_guardian_male,
        )


@dataclass(frozen=True)
class SelectionCoefficients:
    """Log-odds effects of the attendance (sample-inclusion) model.

    ``xi`` is the odds multiplier the follow-up outcome itself exerts on
    attendance; ``xi = 1`` makes selection ignorable given the covariates.
    """

    gamma0: float = 0.15
    gamma_pop: float = -0.33
    gamma_dist: float = -0.08
    gamma_child_age: float = -0.01
    gamma_guardian_age: float = 0.01
    gamma_child_male: float = -0.02
    gamma_guardian_male: float = -0.01
    tau2: float = icc_to_variance(1.0 / 3.0)
    xi: float = 1.0

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ConfigError(f"selection coefficient {f.name} must be finite")
        if self.tau2 < 0:
            raise ConfigError("tau2 must be nonnegative")
        if self.xi <= 0:
            raise ConfigError("xi must be positive")

    def slopes(self) -> tuple[float, ...]:
        return (
            self.gamma_pop,
            self.gamma_dist,
            self.gamma_child_age,
            self.gamma_guardian_age,
            self.gamma_child_male,
            self.gamma_guardian_male,
        )


@dataclass(frozen=True)
class GridConfig:
    village_fractions: tuple[float, ...] = DEFAULT_VILLAGE_FRACTIONS
    response_rates: tuple[float, ...] = DEFAULT_RESPONSE_RATES
    xis: tuple[float, ...] = DEFAULT_XIS

    def validate(self) -> None:
        if not self.village_fractions or not self.response_rates or not self.xis:
            raise ConfigError("grid axes must be nonempty")
        for f in self.village_fractions:
            if not 0.0 < f <= 1.0:
                raise ConfigError(f"village fraction {f} out of (0, 1]")
        for r in self.response_rates:
            if not 0.0 < r < 1.0:
                raise ConfigError(f"response rate {r} out of (0, 1)")
        for x in self.xis:
            if x <= 0:
                raise ConfigError(f"xi {x} must be positive")


@dataclass(frozen=True)
class TuningConfig:
    n_draws: int = 50
    tolerance: float = 0.005
    max_iter: int = 60
    bracket: tuple[float, float] = (-10.0, 10.0)

    def validate(self) -> None:
        if self.n_draws < 1 or self.max_iter < 1:
            raise ConfigError("tuning counts must be positive")
        if self.tolerance <= 0:
            raise ConfigError("tuning tolerance must be positive")
        if self.bracket[0] >= self.bracket[1]:
            raise ConfigError("tuning bracket must be ordered")


@dataclass(frozen=True)
class RunConfig:
    """Everything one grid run needs; serializes to a single YAML file."""

    population: PopulationConfig = field(default_factory=PopulationConfig)
    outcome: OutcomeCoefficients = field(default_factory=OutcomeCoefficients)
    selection: SelectionCoefficients = field(default_factory=SelectionCoefficients)
    grid: GridConfig = field(default_factory=GridConfig)
    tuning: TuningConfig = field(default_factory=TuningConfig)
    n_rep: int = 1000
    master_seed: int = 20250101
    workers: int = 0  # 0 = auto
    output_dir: str = "results"
    population_redraw_per_replicate: bool = False
    # When enabled, re-tunes the follow-up intercept so expected prevalence hits
    # followup_target_rate; the default keeps the census-fitted intercept, under
    # which expected follow-up prevalence sits near 0.83.
    tune_followup_intercept: bool = False
    followup_target_rate: float | None = None
    # "village": unweighted mean of per-village attendance proportions (default
    # reading of "average across all villages"); "child": plain child-level rate.
    response_rate_weighting: str = "village"
    # Cluster-sandwich small-sample factor: g/(g-1) over respondent clusters,
    # or 1 when disabled.
    sandwich_small_sample: bool = True
    # Divisor of the calibration variance: "estimated" uses N-hat = sum V_j/pi_j,
    # "known" uses the census N.
    calibration_variance_divisor: str = "estimated"

    def validate(self) -> None:
        self.population.validate()
        self.outcome.validate()
        self.selection.validate()
        self.grid.validate()
        self.tuning.validate()
        if self.n_rep < 1:
            raise ConfigError("n_rep must be >= 1")
        if self.workers < 0:
            raise ConfigError("workers must be >= 0")
        if self.response_rate_weighting not in ("village", "child"):
            raise ConfigError("response_rate_weighting must be 'village' or 'child'")
        if self.calibration_variance_divisor not in ("estimated", "known"):
            raise ConfigError("calibration_variance_divisor must be 'estimated' or 'known'")
        if self.followup_target_rate is not None and not 0.0 < self.followup_target_rate < 1.0:
            raise ConfigError("followup_target_rate must lie in (0, 1)")


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{path}' must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in '{path}': {sorted(unknown)}")
    kwargs = {}
    for name in known:
        if name not in data:
            continue
        value = data[name]
        if cls is RunConfig and name in _SECTIONS:
            kwargs[name] = _build(_SECTIONS[name], value, f"{path}.{name}")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad values in '{path}': {exc}") from exc


_SECTIONS = {
    "population": PopulationConfig,
    "outcome": OutcomeCoefficients,
    "selection": SelectionCoefficients,
    "grid": GridConfig,
    "tuning": TuningConfig,
}


def run_config_to_dict(cfg: RunConfig) -> dict:
    return _to_plain(cfg)


def run_config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data, "run")
    cfg.validate()
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and validate a YAML run config; env vars may override seed/workers."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    cfg = run_config_from_dict(data)
    return apply_env_overrides(cfg)


def save_run_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(run_config_to_dict(cfg), fh, sort_keys=False)


def apply_env_overrides(cfg: RunConfig) -> RunConfig:
    """Honor ANCHORSIM_SEED and ANCHORSIM_WORKERS (the only env knobs)."""
    updates = {}
    seed = os.environ.get("ANCHORSIM_SEED")
    if seed is not None:
        updates["master_seed"] = int(seed)
    workers = os.environ.get("ANCHORSIM_WORKERS")
    if workers is not None:
        updates["workers"] = int(workers)
    return dataclasses.replace(cfg, **updates) if updates else cfg


def resolve_outcome(cfg: RunConfig) -> OutcomeCoefficients:
    """Concrete outcome coefficients: sigma2 filled from the population ICC if unset."""
    if cfg.outcome.sigma2 is not None:
        return cfg.outcome
    return dataclasses.replace(
        cfg.outcome, sigma2=icc_to_variance(cfg.population.icc_vaccination)
    )


def config_hash(cfg: RunConfig) -> str:
    """Stable content hash of everything that affects simulation output."""
    payload = run_config_to_dict(cfg)
    payload.pop("workers", None)  # scheduling must not change results
    payload.pop("output_dir", None)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
