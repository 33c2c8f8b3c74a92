"""Grid orchestration: tune, replicate, aggregate, persist — reproducibly.

Random streams are spawned from (master_seed, domain, scenario ordinal,
replicate index) via numpy SeedSequence, so results are independent of worker
count and scheduling, and no two replicates share a stream.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    RunConfig,
    SelectionCoefficients,
    config_hash,
    resolve_outcome,
)
from .dgm import Scenario, realize, outcome_fixed_lp, selection_fixed_lp, tune_gamma0
from .dgm import tune_followup_intercept
from .estimators import (
    EstimationError,
    EstimatorOptions,
    METHOD_CALIBRATED,
    METHOD_LOGISTIC,
    build_auxiliary,
    estimate_calibrated,
    estimate_imputation,
)
from .metrics import ReplicateRecord, ScenarioSummary, summarize
from .population import (
    generate_baseline,
    synthesize_population,
    tune_baseline_intercept,
)

log = logging.getLogger("anchorsim")

# SeedSequence spawn-key domains; never reuse across roles.
_DOMAIN_BASELINE = 1
_DOMAIN_TUNING = 2
_DOMAIN_REPLICATE = 3
_DOMAIN_POP_REDRAW = 4

REPLICATE_COLUMNS = [
    "scenario_id",
    "fraction",
    "response_rate",
    "xi",
    "rep",
    "method",
    "p_true",
    "p_hat",
    "se",
    "ci95_lo",
    "ci95_hi",
    "ci90_lo",
    "ci90_hi",
    "covered",
    "equiv05",
    "equiv075",
    "failed",
    "reason",
]

SUMMARY_COLUMNS = [
    "scenario_id",
    "village_fraction",
    "response_rate",
    "xi",
    "method",
    "n_rep_effective",
    "failure_count",
    "bias",
    "bias_mcse",
    "coverage",
    "coverage_mcse",
    "equiv05",
    "equiv05_mcse",
    "equiv075",
    "equiv075_mcse",
    "mean_se",
]


@dataclass(frozen=True)
class Prepared:
    """Fixed census plus resolved coefficients shared by every replicate."""

    population: object
    outcome: object
    selection_base: SelectionCoefficients
    aux: object
    outcome_lp: np.ndarray
    selection_lp: np.ndarray
    baseline_beta0: float


def build_grid(cfg: RunConfig) -> list[Scenario]:
    """Cartesian scenario grid, ordered fraction desc, rate desc, xi asc."""
    scenarios = []
    for f in sorted(cfg.grid.village_fractions, reverse=True):
        for r in sorted(cfg.grid.response_rates, reverse=True):
            for x in sorted(cfg.grid.xis):
                scenarios.append(Scenario.make(f, r, x))
    return scenarios


def tuning_pairs(cfg: RunConfig) -> list[tuple[float, float]]:
    """(response_rate, xi) pairs needing a tuned selection intercept."""
    return [
        (r, x)
        for r in sorted(cfg.grid.response_rates, reverse=True)
        for x in sorted(cfg.grid.xis)
    ]


def pair_key(rate: float, xi: float) -> str:
    return f"rr{rate:.2f}_xi{xi:.1f}"


def prepare(cfg: RunConfig) -> Prepared:
    """Synthesize the census, tune both outcome intercepts, freeze the auxiliaries."""
    cfg.validate()
    oc = resolve_outcome(cfg)
    pop = synthesize_population(cfg.population)
    beta0_baseline = tune_baseline_intercept(pop, oc, cfg.population.baseline_target_rate)
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.master_seed, spawn_key=(_DOMAIN_BASELINE,))
    )
    pop = generate_baseline(pop, dataclasses.replace(oc, beta0=beta0_baseline), rng)
    if cfg.tune_followup_intercept:
        target = (
            cfg.followup_target_rate
            if cfg.followup_target_rate is not None
            else cfg.population.baseline_target_rate
        )
        oc = dataclasses.replace(oc, beta0=tune_followup_intercept(pop, oc, target))
    return Prepared(
        population=pop,
        outcome=oc,
        selection_base=cfg.selection,
        aux=build_auxiliary(pop),
        outcome_lp=outcome_fixed_lp(pop, oc),
        selection_lp=selection_fixed_lp(pop, cfg.selection),
        baseline_beta0=beta0_baseline,
    )


def tune_selection_intercepts(cfg: RunConfig, prepared: Prepared) -> dict[str, dict]:
    """Tune gamma0 for every (response rate, xi) pair; returns the tuning table."""
    table: dict[str, dict] = {}
    for idx, (rate, xi) in enumerate(tuning_pairs(cfg)):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=cfg.master_seed, spawn_key=(_DOMAIN_TUNING, idx))
        )
        sc = dataclasses.replace(prepared.selection_base, xi=xi)
        gamma0, achieved, iters = tune_gamma0(
            prepared.population,
            prepared.outcome,
            sc,
            rate,
            cfg.tuning,
            rng,
            weighting=cfg.response_rate_weighting,
            outcome_lp=prepared.outcome_lp,
        )
        table[pair_key(rate, xi)] = {
            "response_rate": rate,
            "xi": xi,
            "gamma0": gamma0,
            "achieved_rate": achieved,
            "iterations": iters,
        }
        log.info("tuned %s: gamma0=%.6f achieved=%.4f", pair_key(rate, xi), gamma0, achieved)
    return table


def attach_gamma0(scenarios: list[Scenario], table: dict[str, dict]) -> list[Scenario]:
    out = []
    for s in scenarios:
        entry = table[pair_key(s.response_rate_target, s.xi)]
        out.append(dataclasses.replace(s, gamma0_tuned=entry["gamma0"]))
    return out


def _replicate_prepared(cfg: RunConfig, prepared: Prepared, rep_ss) -> Prepared:
    """Fresh census for one replicate (redraw mode); tuned intercepts are kept."""
    pop_seed = int(rep_ss.generate_state(1)[0])
    pop_cfg = dataclasses.replace(cfg.population, rng_seed=pop_seed)
    pop = synthesize_population(pop_cfg)
    rng = np.random.default_rng(rep_ss.spawn(1)[0])
    pop = generate_baseline(
        pop, dataclasses.replace(prepared.outcome, beta0=prepared.baseline_beta0), rng
    )
    return Prepared(
        population=pop,
        outcome=prepared.outcome,
        selection_base=prepared.selection_base,
        aux=build_auxiliary(pop),
        outcome_lp=outcome_fixed_lp(pop, prepared.outcome),
        selection_lp=selection_fixed_lp(pop, prepared.selection_base),
        baseline_beta0=prepared.baseline_beta0,
    )


def run_replicate(
    cfg: RunConfig,
    prepared: Prepared,
    scenario: Scenario,
    ordinal: int,
    rep_index: int,
) -> list[ReplicateRecord]:
    """One replicate: a single realization estimated by both methods."""
    ss = np.random.SeedSequence(
        entropy=cfg.master_seed, spawn_key=(_DOMAIN_REPLICATE, ordinal, rep_index)
    )
    if cfg.population_redraw_per_replicate:
        redraw_ss = np.random.SeedSequence(
            entropy=cfg.master_seed, spawn_key=(_DOMAIN_POP_REDRAW, ordinal, rep_index)
        )
        prepared = _replicate_prepared(cfg, prepared, redraw_ss)
    rng = np.random.default_rng(ss)
    sc = dataclasses.replace(
        prepared.selection_base, gamma0=scenario.gamma0_tuned, xi=scenario.xi
    )
    real = realize(
        prepared.population,
        prepared.outcome,
        sc,
        scenario.village_fraction,
        rng,
        outcome_lp=prepared.outcome_lp,
        selection_lp=prepared.selection_lp,
    )
    options = EstimatorOptions(
        sandwich_small_sample=cfg.sandwich_small_sample,
        calibration_variance_divisor=cfg.calibration_variance_divisor,
    )
    records = []
    routes = [
        (METHOD_CALIBRATED, estimate_calibrated),
        (METHOD_LOGISTIC, estimate_imputation),
    ]
    for method, fn in routes:
        try:
            res = fn(
                prepared.population,
                prepared.aux,
                real.sampled_villages,
                real.respondents,
                real.y1,
                options,
            )
            records.append(
                ReplicateRecord(
                    scenario_id=scenario.scenario_id,
                    rep_index=rep_index,
                    method=method,
                    p_true=real.p_true,
                    p_hat=res.p_hat,
                    se=res.se,
                    ci95=res.ci95,
                    ci90=res.ci90,
                )
            )
        except EstimationError as exc:
            records.append(
                ReplicateRecord(
                    scenario_id=scenario.scenario_id,
                    rep_index=rep_index,
                    method=method,
                    p_true=real.p_true,
                    failed=True,
                    failure_reason=exc.reason,
                )
            )
    return records


def run_scenario(
    cfg: RunConfig, prepared: Prepared, scenario: Scenario, ordinal: int
) -> list[ReplicateRecord]:
    records = []
    for rep in range(cfg.n_rep):
        records.extend(run_replicate(cfg, prepared, scenario, ordinal, rep))
    return records


# Per-process cache for pool workers: prepare() is deterministic, so every
# worker reconstructs an identical census instead of unpickling one per task.
_worker_state: dict = {}


def _init_worker(cfg_dict: dict) -> None:
    from .config import run_config_from_dict

    cfg = run_config_from_dict(cfg_dict)
    _worker_state["cfg"] = cfg
    _worker_state["prepared"] = prepare(cfg)


def _run_scenario_task(args) -> tuple[str, list[ReplicateRecord]]:
    scenario, ordinal = args
    records = run_scenario(_worker_state["cfg"], _worker_state["prepared"], scenario, ordinal)
    return scenario.scenario_id, records


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records_csv(path: Path, records: list[ReplicateRecord], scenario_map: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPLICATE_COLUMNS)
        for r in records:
            s = scenario_map[r.scenario_id]
            writer.writerow(
                [
                    r.scenario_id,
                    _fmt(s.village_fraction),
                    _fmt(s.response_rate_target),
                    _fmt(s.xi),
                    r.rep_index,
                    r.method,
                    _fmt(r.p_true),
                    _fmt(r.p_hat),
                    _fmt(r.se),
                    _fmt(None if r.ci95 is None else r.ci95[0]),
                    _fmt(None if r.ci95 is None else r.ci95[1]),
                    _fmt(None if r.ci90 is None else r.ci90[0]),
                    _fmt(None if r.ci90 is None else r.ci90[1]),
                    _fmt(r.covered),
                    _fmt(r.equivalent(0.05)),
                    _fmt(r.equivalent(0.075)),
                    _fmt(r.failed),
                    r.failure_reason or "",
                ]
            )


def read_records_csv(path: Path) -> tuple[list[ReplicateRecord], dict[str, dict]]:
    """Returns (records, scenario factor map keyed by scenario_id)."""
    records = []
    factors: dict[str, dict] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            sid = row["scenario_id"]
            factors.setdefault(
                sid,
                {
                    "village_fraction": float(row["fraction"]),
                    "response_rate": float(row["response_rate"]),
                    "xi": float(row["xi"]),
                },
            )
            failed = row["failed"] == "1"
            records.append(
                ReplicateRecord(
                    scenario_id=sid,
                    rep_index=int(row["rep"]),
                    method=row["method"],
                    p_true=float(row["p_true"]),
                    p_hat=None if failed else float(row["p_hat"]),
                    se=None if failed else float(row["se"]),
                    ci95=None if failed else (float(row["ci95_lo"]), float(row["ci95_hi"])),
                    ci90=None if failed else (float(row["ci90_lo"]), float(row["ci90_hi"])),
                    failed=failed,
                    failure_reason=row["reason"] or None,
                )
            )
    return records, factors


def write_summary_csv(path: Path, summaries: list[ScenarioSummary], factors: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            f = factors[s.scenario_id]
            writer.writerow(
                [
                    s.scenario_id,
                    _fmt(f["village_fraction"]),
                    _fmt(f["response_rate"]),
                    _fmt(f["xi"]),
                    s.method,
                    s.n_rep_effective,
                    s.failure_count,
                    _fmt(s.bias),
                    _fmt(s.bias_mcse),
                    _fmt(s.coverage),
                    _fmt(s.coverage_mcse),
                    _fmt(s.equiv05),
                    _fmt(s.equiv05_mcse),
                    _fmt(s.equiv075),
                    _fmt(s.equiv075_mcse),
                    _fmt(s.mean_se),
                ]
            )


def _effective_workers(cfg: RunConfig) -> int:
    if cfg.workers > 0:
        return cfg.workers
    return min(os.cpu_count() or 1, 8)


@dataclass
class RunResult:
    output_dir: Path
    replicates_csv: Path
    summary_csv: Path
    manifest_path: Path
    summaries: list[ScenarioSummary]
    aborted_scenarios: list[str]


def run_grid(
    cfg: RunConfig,
    scenario_ids: set[str] | None = None,
    resume: bool = True,
    tuning_table: dict | None = None,
) -> RunResult:
    """Execute the scenario grid and persist all outputs under cfg.output_dir.

    Per-scenario part files make the run resumable at scenario granularity;
    the merged replicates.csv and summary.csv are byte-stable for a given
    config regardless of worker count.
    """
    cfg.validate()
    out = Path(cfg.output_dir)
    parts_dir = out / "parts"
    parts_dir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)

    prepared = prepare(cfg)
    if tuning_table is None:
        tuning_table = load_or_tune(cfg, prepared, out)
    grid = attach_gamma0(build_grid(cfg), tuning_table)
    selected = [
        (s, i) for i, s in enumerate(grid) if scenario_ids is None or s.scenario_id in scenario_ids
    ]
    if scenario_ids is not None and len(selected) != len(scenario_ids):
        known = {s.scenario_id for s in grid}
        raise ValueError(f"unknown scenario ids: {sorted(scenario_ids - known)}")

    manifest_path = out / "manifest.json"
    manifest = _load_manifest(manifest_path)
    if manifest.get("config_hash") != chash:
        manifest = {
            "config_hash": chash,
            "version": __version__,
            "created_at": _now(),
            "n_rep": cfg.n_rep,
            "master_seed": cfg.master_seed,
            "tuning": tuning_table,
            "scenarios": {},
        }
        for stale in parts_dir.glob("*.csv"):
            stale.unlink()
    manifest.setdefault("scenarios", {})
    manifest["tuning"] = tuning_table
    _write_manifest(manifest_path, manifest)

    scenario_map = {s.scenario_id: s for s in grid}
    pending = []
    for s, ordinal in selected:
        done = resume and manifest["scenarios"].get(s.scenario_id) == "done"
        if done and (parts_dir / f"{s.scenario_id}.csv").exists():
            continue
        pending.append((s, ordinal))

    workers = _effective_workers(cfg)
    aborted: list[str] = []

    def _finish(sid: str, records: list[ReplicateRecord]) -> None:
        write_records_csv(parts_dir / f"{sid}.csv", records, scenario_map)
        manifest["scenarios"][sid] = "done"
        _write_manifest(manifest_path, manifest)
        fail_rate = sum(r.failed for r in records) / max(len(records), 1)
        if fail_rate > 0.01:
            log.warning("scenario %s: estimation failure rate %.1f%%", sid, 100 * fail_rate)

    if pending:
        if workers == 1 or len(pending) == 1:
            for s, ordinal in pending:
                try:
                    _finish(s.scenario_id, run_scenario(cfg, prepared, s, ordinal))
                except Exception:
                    log.exception("scenario %s aborted", s.scenario_id)
                    aborted.append(s.scenario_id)
        else:
            from concurrent.futures import as_completed

            from .config import run_config_to_dict

            with ProcessPoolExecutor(
                max_workers=min(workers, len(pending)),
                initializer=_init_worker,
                initargs=(run_config_to_dict(cfg),),
            ) as pool:
                futures = {pool.submit(_run_scenario_task, t): t[0].scenario_id for t in pending}
                for fut in as_completed(futures):
                    sid = futures[fut]
                    try:
                        _finish(*fut.result())
                    except Exception:
                        log.exception("scenario %s aborted", sid)
                        aborted.append(sid)

    # Merge in grid order so the concatenated CSV is scheduling-independent.
    all_records: list[ReplicateRecord] = []
    for s, _ in selected:
        part = parts_dir / f"{s.scenario_id}.csv"
        if not part.exists():
            continue  # aborted scenario
        recs, _ = read_records_csv(part)
        all_records.extend(recs)

    replicates_csv = out / "replicates.csv"
    write_records_csv(replicates_csv, all_records, scenario_map)
    summaries = summarize(all_records)
    factors = {
        s.scenario_id: {
            "village_fraction": s.village_fraction,
            "response_rate": s.response_rate_target,
            "xi": s.xi,
        }
        for s in grid
    }
    summary_csv = out / "summary.csv"
    write_summary_csv(summary_csv, summaries, factors)

    manifest["completed_at"] = _now()
    _write_manifest(manifest_path, manifest)
    return RunResult(
        output_dir=out,
        replicates_csv=replicates_csv,
        summary_csv=summary_csv,
        manifest_path=manifest_path,
        summaries=summaries,
        aborted_scenarios=aborted,
    )


def load_or_tune(cfg: RunConfig, prepared: Prepared, out_dir: Path) -> dict:
    """Reuse the persisted tuning table when the config hash matches."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "tuning.json"
    chash = config_hash(cfg)
    if path.exists():
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError:
            payload = {}
        if payload.get("config_hash") == chash:
            log.info("tuning table cache hit (%s)", chash)
            return payload["pairs"]
    table = tune_selection_intercepts(cfg, prepared)
    path.write_text(json.dumps({"config_hash": chash, "pairs": table}, indent=2, sort_keys=True))
    return table


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


def _load_manifest(path: Path) -> dict:
    if path.exists():
        try:
            return json.loads(path.read_text())
        except json.JSONDecodeError:
            return {}
    return {}


def _write_manifest(path: Path, manifest: dict) -> None:
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
