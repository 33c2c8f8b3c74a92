"""Command-line entry point: tune / run / report / validate / serve.

A thin shell over the library; every behavior here is reachable through
plain function calls. Exit codes: 0 success, 1 config/validation error,
2 runtime failure.
"""

from __future__ import annotations

import dataclasses
import logging
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import (
    ConfigError,
    RunConfig,
    apply_env_overrides,
    load_run_config,
    run_config_to_dict,
    save_run_config,
)
from .harness import build_grid, load_or_tune, prepare, run_grid

log = logging.getLogger("anchorsim")


def _load_config(config_path: str | None) -> RunConfig:
    if config_path is None:
        cfg = apply_env_overrides(RunConfig())
        cfg.validate()
        return cfg
    return load_run_config(config_path)


def _fail(exc: Exception, code: int) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


@click.group()
@click.version_option(version=__version__)
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    default=None,
    help="YAML run configuration (library defaults if omitted).",
)
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
@click.pass_context
def main(ctx, config_path, verbose):
    """Simulation engine for census-anchored convenience-survey estimators."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path


def _config_from_ctx(ctx, **overrides) -> RunConfig:
    try:
        cfg = _load_config(ctx.obj.get("config_path"))
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
            cfg.validate()
        return cfg
    except ConfigError as exc:
        _fail(exc, 1)


@main.command("init-config")
@click.argument("path", type=click.Path(dir_okay=False))
def cmd_init_config(path):
    """Write the default configuration to PATH for editing."""
    save_run_config(RunConfig(), path)
    click.echo(f"wrote default config to {path}")


@main.command("tune")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--force", is_flag=True, help="Ignore any cached tuning table.")
@click.pass_context
def cmd_tune(ctx, out_dir, force):
    """Tune the selection intercept for every (response rate, xi) pair."""
    cfg = _config_from_ctx(ctx, **({"output_dir": out_dir} if out_dir else {}))
    out = Path(cfg.output_dir)
    if force:
        cache = out / "tuning.json"
        if cache.exists():
            cache.unlink()
    try:
        prep = prepare(cfg)
        table = load_or_tune(cfg, prep, out)
    except Exception as exc:  # tuning/runtime failures are exit code 2
        _fail(exc, 2)
    click.echo(f"{'pair':<16} {'gamma0':>10} {'achieved':>9} {'iters':>6}")
    for key, entry in table.items():
        click.echo(
            f"{key:<16} {entry['gamma0']:>10.5f} {entry['achieved_rate']:>9.4f} "
            f"{entry['iterations']:>6d}"
        )
    click.echo(f"tuning table: {out / 'tuning.json'}")


def _parse_scenario_filter(spec: str, cfg: RunConfig) -> set[str]:
    wanted = {}
    for part in spec.split(","):
        key, _, value = part.partition("=")
        key = key.strip()
        if key not in ("fraction", "rate", "xi") or not value:
            raise ConfigError(f"bad scenario filter term '{part}' (use fraction=, rate=, xi=)")
        wanted[key] = float(value)
    ids = set()
    for s in build_grid(cfg):
        if "fraction" in wanted and s.village_fraction != wanted["fraction"]:
            continue
        if "rate" in wanted and s.response_rate_target != wanted["rate"]:
            continue
        if "xi" in wanted and s.xi != wanted["xi"]:
            continue
        ids.add(s.scenario_id)
    if not ids:
        raise ConfigError(f"scenario filter '{spec}' matches nothing")
    return ids


@main.command("run")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--nrep", type=int, default=None, help="Override replicates per scenario.")
@click.option("--workers", type=int, default=None, help="Override worker count.")
@click.option("--seed", type=int, default=None, help="Override the master seed.")
@click.option("--scenario", "scenario_spec", default=None, help="e.g. fraction=0.25,rate=0.5,xi=1.5")
@click.option("--no-resume", is_flag=True, help="Recompute scenarios even if cached.")
@click.option("--server", "server_url", default=None, help="Submit to a running service instead.")
@click.pass_context
def cmd_run(ctx, out_dir, nrep, workers, seed, scenario_spec, no_resume, server_url):
    """Execute the scenario grid and write replicates.csv / summary.csv."""
    overrides = {}
    if out_dir:
        overrides["output_dir"] = out_dir
    if nrep is not None:
        overrides["n_rep"] = nrep
    if workers is not None:
        overrides["workers"] = workers
    if seed is not None:
        overrides["master_seed"] = seed
    cfg = _config_from_ctx(ctx, **overrides)
    try:
        scenario_ids = _parse_scenario_filter(scenario_spec, cfg) if scenario_spec else None
    except ConfigError as exc:
        _fail(exc, 1)

    if server_url is not None:
        _run_remote(cfg, server_url, scenario_ids)
        return

    try:
        result = run_grid(cfg, scenario_ids=scenario_ids, resume=not no_resume)
    except Exception as exc:  # runtime failures are exit code 2
        _fail(exc, 2)
    click.echo(f"replicates: {result.replicates_csv}")
    click.echo(f"summary:    {result.summary_csv}")
    click.echo(f"manifest:   {result.manifest_path}")
    if result.aborted_scenarios:
        click.echo(f"aborted scenarios: {result.aborted_scenarios}", err=True)
        sys.exit(2)


def _run_remote(cfg: RunConfig, server_url: str, scenario_ids: set[str] | None) -> None:
    """Thin-client mode: submit the run, poll, download the outputs."""
    import httpx

    payload = {"config": run_config_to_dict(cfg)}
    if scenario_ids is not None:
        payload["scenario_ids"] = sorted(scenario_ids)
    base = server_url.rstrip("/")
    with httpx.Client(base_url=base, timeout=60.0) as client:
        resp = client.post("/runs", json=payload)
        if resp.status_code != 202:
            _fail(RuntimeError(f"service rejected the run: {resp.status_code} {resp.text}"), 2)
        run_id = resp.json()["run_id"]
        click.echo(f"submitted run {run_id}")
        while True:
            status = client.get(f"/runs/{run_id}").json()
            if status["state"] in ("done", "failed"):
                break
            time.sleep(1.0)
        if status["state"] == "failed":
            _fail(RuntimeError(f"remote run failed: {status.get('error')}"), 2)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in ("replicates.csv", "summary.csv", "manifest.json", "tuning.json"):
            data = client.get(f"/runs/{run_id}/files/{name}")
            if data.status_code == 200:
                (out / name).write_bytes(data.content)
                click.echo(f"downloaded {out / name}")


@main.command("report")
@click.option("--results", "results_dir", type=click.Path(file_okay=False), default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.pass_context
def cmd_report(ctx, results_dir, out_dir):
    """Render grouped tables and emit plot-data CSVs from a completed run."""
    from .report import generate_report, read_summary_csv, render_tables

    cfg = _config_from_ctx(ctx)
    results = Path(results_dir) if results_dir else Path(cfg.output_dir)
    try:
        outputs = generate_report(results, out_dir)
        click.echo(render_tables(read_summary_csv(results / "summary.csv")))
    except FileNotFoundError as exc:
        _fail(exc, 1)
    except Exception as exc:
        _fail(exc, 2)
    click.echo(f"tables:     {outputs['tables']}")
    for p in outputs["lines"]:
        click.echo(f"plot data:  {p}")
    click.echo(f"zipper CSVs: {len(outputs['zipper'])} files under {outputs['tables'].parent / 'zipper'}")
    click.echo(f"TOST CSVs:   {len(outputs['tost'])} files under {outputs['tables'].parent / 'tost'}")


@main.command("validate")
@click.option("--fast", is_flag=True, help="Trim the Monte Carlo oracle redraw counts.")
@click.option("--dump-population", type=click.Path(dir_okay=False), default=None)
@click.option("--dump-sample", type=click.Path(dir_okay=False), default=None)
@click.option("--estimate", "estimate_csv", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--fraction", type=float, default=0.5, help="Village fraction for --dump-sample.")
@click.option("--xi", type=float, default=1.0, help="Selection odds ratio for --dump-sample.")
@click.option("--gamma0", type=float, default=0.0, help="Selection intercept for --dump-sample.")
@click.pass_context
def cmd_validate(ctx, fast, dump_population, dump_sample, estimate_csv, fraction, xi, gamma0):
    """Run the oracle/property suite; optionally dump or estimate debug CSVs."""
    from . import validation
    from .population import dump_population_csv

    cfg = _config_from_ctx(ctx)

    if dump_population or dump_sample:
        prep = prepare(cfg)
        if dump_population:
            dump_population_csv(prep.population, dump_population)
            click.echo(f"population dump: {dump_population}")
        if dump_sample:
            from .dgm import realize

            sc = dataclasses.replace(cfg.selection, gamma0=gamma0, xi=xi)
            rng = np.random.default_rng(cfg.master_seed)
            real = realize(prep.population, prep.outcome, sc, fraction, rng)
            validation.dump_realization_csv(prep.population, real, dump_sample)
            click.echo(f"realization dump: {dump_sample} (p_true={real.p_true:.5f})")
        return

    if estimate_csv:
        try:
            res_cal, res_imp, p_true = validation.estimate_from_csv(estimate_csv)
        except Exception as exc:  # noqa: BLE001 - debugging surface, report everything
            _fail(exc, 2)
        click.echo(f"p_true            {p_true:.6f}")
        for res in (res_cal, res_imp):
            click.echo(
                f"{res.method:<18} p_hat={res.p_hat:.6f} se={res.se:.6f} "
                f"ci95=({res.ci95[0]:.6f}, {res.ci95[1]:.6f})"
            )
        return

    checks = validation.run_all_checks(fast=fast)
    failed = 0
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        failed += 0 if c.passed else 1
        click.echo(f"[{status}] {c.name}: {c.detail}")
    if failed:
        click.echo(f"{failed} check(s) failed", err=True)
        sys.exit(2)
    click.echo("all checks passed")


@main.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
@click.pass_context
def cmd_serve(ctx, host, port):
    """Start the HTTP service wrapping the simulation engine."""
    import uvicorn

    from .service.app import create_app

    cfg = _config_from_ctx(ctx)
    uvicorn.run(create_app(default_config=cfg), host=host, port=port)


if __name__ == "__main__":
    main()
