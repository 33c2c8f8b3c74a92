"""FastAPI service wrapping the simulation engine.

Grid runs execute in background threads against per-run output directories;
clients poll status and fetch the produced files. Tuning and single-replicate
estimation are synchronous.
"""

from __future__ import annotations

import dataclasses
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse

from ..config import ConfigError, RunConfig, config_hash, run_config_from_dict
from ..dgm import realize
from ..estimators import (
    EstimationError,
    METHOD_CALIBRATED,
    METHOD_LOGISTIC,
    estimate_calibrated,
    estimate_imputation,
)
from ..harness import build_grid, load_or_tune, prepare, run_grid
from ..population import TuningError
from . import models

SERVED_FILES = ("replicates.csv", "summary.csv", "manifest.json", "tuning.json")


@dataclass
class RunJob:
    run_id: str
    config: RunConfig
    scenario_ids: set[str] | None
    output_dir: Path
    state: str = "pending"
    error: str | None = None
    scenarios_done: int = 0
    scenarios_total: int = 0
    summaries: list = field(default_factory=list)


class JobRegistry:
    def __init__(self, runs_root: Path):
        self.runs_root = runs_root
        self._jobs: dict[str, RunJob] = {}
        self._lock = threading.Lock()

    def create(self, cfg: RunConfig, scenario_ids: set[str] | None) -> RunJob:
        run_id = uuid.uuid4().hex[:12]
        out = self.runs_root / run_id
        cfg = dataclasses.replace(cfg, output_dir=str(out))
        job = RunJob(run_id=run_id, config=cfg, scenario_ids=scenario_ids, output_dir=out)
        job.scenarios_total = len(scenario_ids) if scenario_ids else len(build_grid(cfg))
        with self._lock:
            self._jobs[run_id] = job
        return job

    def get(self, run_id: str) -> RunJob:
        with self._lock:
            job = self._jobs.get(run_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id}")
        return job

    def all(self) -> list[RunJob]:
        with self._lock:
            return list(self._jobs.values())


def _config_from_model(model: models.RunConfigModel) -> RunConfig:
    try:
        return run_config_from_dict(model.model_dump())
    except ConfigError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


def _execute(job: RunJob) -> None:
    job.state = "running"
    try:
        result = run_grid(job.config, scenario_ids=job.scenario_ids)
        job.summaries = result.summaries
        job.scenarios_done = job.scenarios_total - len(result.aborted_scenarios)
        if result.aborted_scenarios:
            job.state = "failed"
            job.error = f"aborted scenarios: {result.aborted_scenarios}"
        else:
            job.state = "done"
    except Exception as exc:  # surface anything to the client
        job.state = "failed"
        job.error = str(exc)


def _status(job: RunJob) -> models.RunStatus:
    return models.RunStatus(
        run_id=job.run_id,
        state=job.state,
        config_hash=config_hash(job.config),
        scenarios_done=job.scenarios_done,
        scenarios_total=job.scenarios_total,
        error=job.error,
    )


def create_app(
    default_config: RunConfig | None = None, runs_root: str | Path = "service_runs"
) -> FastAPI:
    from .. import __version__

    app = FastAPI(title="anchorsim", version=__version__)
    registry = JobRegistry(Path(runs_root))
    prepared_cache: dict[str, object] = {}
    cache_lock = threading.Lock()

    def _prepared_for(cfg: RunConfig):
        key = config_hash(cfg)
        with cache_lock:
            hit = prepared_cache.get(key)
        if hit is not None:
            return hit
        prep = prepare(cfg)
        with cache_lock:
            prepared_cache[key] = prep
        return prep

    @app.get("/health", response_model=models.HealthResponse)
    def health():
        return models.HealthResponse(status="ok", version=__version__)

    @app.post("/runs", response_model=models.RunSubmitted, status_code=202)
    def submit_run(req: models.RunRequest):
        cfg = _config_from_model(req.config)
        ids = set(req.scenario_ids) if req.scenario_ids else None
        if ids is not None:
            known = {s.scenario_id for s in build_grid(cfg)}
            unknown = ids - known
            if unknown:
                raise HTTPException(status_code=400, detail=f"unknown scenarios: {sorted(unknown)}")
        job = registry.create(cfg, ids)
        threading.Thread(target=_execute, args=(job,), daemon=True).start()
        return models.RunSubmitted(run_id=job.run_id)

    @app.get("/runs", response_model=list[models.RunStatus])
    def list_runs():
        return [_status(j) for j in registry.all()]

    @app.get("/runs/{run_id}", response_model=models.RunStatus)
    def run_status(run_id: str):
        return _status(registry.get(run_id))

    @app.get("/runs/{run_id}/summary", response_model=list[models.SummaryRow])
    def run_summary(run_id: str):
        job = registry.get(run_id)
        if job.state != "done":
            raise HTTPException(status_code=409, detail=f"run is {job.state}")
        grid = {s.scenario_id: s for s in build_grid(job.config)}
        rows = []
        for s in job.summaries:
            sc = grid[s.scenario_id]
            rows.append(
                models.SummaryRow(
                    scenario_id=s.scenario_id,
                    village_fraction=sc.village_fraction,
                    response_rate=sc.response_rate_target,
                    xi=sc.xi,
                    method=s.method,
                    n_rep_effective=s.n_rep_effective,
                    failure_count=s.failure_count,
                    bias=s.bias,
                    bias_mcse=s.bias_mcse,
                    coverage=s.coverage,
                    coverage_mcse=s.coverage_mcse,
                    equiv05=s.equiv05,
                    equiv05_mcse=s.equiv05_mcse,
                    equiv075=s.equiv075,
                    equiv075_mcse=s.equiv075_mcse,
                    mean_se=s.mean_se,
                )
            )
        return rows

    @app.get("/runs/{run_id}/files/{name}")
    def run_file(run_id: str, name: str):
        job = registry.get(run_id)
        if name not in SERVED_FILES:
            raise HTTPException(status_code=404, detail=f"unknown file {name}")
        path = job.output_dir / name
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"{name} not produced yet")
        return FileResponse(path, media_type="text/plain", filename=name)

    @app.post("/tune", response_model=models.TuneResponse)
    def tune(req: models.TuneRequest):
        cfg = _config_from_model(req.config)
        try:
            prep = _prepared_for(cfg)
            out = registry.runs_root / f"tune_{config_hash(cfg)}"
            table = load_or_tune(cfg, prep, out)
        except TuningError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return models.TuneResponse(
            config_hash=config_hash(cfg),
            pairs={k: models.TunedPair(**v) for k, v in table.items()},
        )

    @app.post("/replicate", response_model=models.ReplicateResponse)
    def replicate(req: models.ReplicateRequest):
        cfg = _config_from_model(req.config)
        prep = _prepared_for(cfg)
        sc = dataclasses.replace(cfg.selection, gamma0=req.gamma0, xi=req.xi)
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=cfg.master_seed, spawn_key=(99, req.rep_index))
        )
        real = realize(prep.population, prep.outcome, sc, req.village_fraction, rng)
        results = []
        for method, fn in (
            (METHOD_CALIBRATED, estimate_calibrated),
            (METHOD_LOGISTIC, estimate_imputation),
        ):
            try:
                res = fn(
                    prep.population,
                    prep.aux,
                    real.sampled_villages,
                    real.respondents,
                    real.y1,
                )
                results.append(
                    models.EstimateModel(
                        method=method, p_hat=res.p_hat, se=res.se, ci95=res.ci95, ci90=res.ci90
                    )
                )
            except EstimationError as exc:
                results.append(
                    models.EstimateModel(method=method, failed=True, failure_reason=exc.reason)
                )
        return models.ReplicateResponse(
            p_true=real.p_true,
            n_respondents=int(real.respondents.size),
            m_villages=int(real.sampled_villages.size),
            results=results,
        )

    return app
