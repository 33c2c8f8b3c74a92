"""Rendering of run outputs: grouped markdown tables and plot-ready CSV files."""

from __future__ import annotations

import csv
from pathlib import Path

from .estimators import METHOD_CALIBRATED, METHOD_LOGISTIC
from .harness import read_records_csv
from .metrics import format_bias, format_equivalence, format_proportion

METHOD_LABELS = {
    METHOD_CALIBRATED: "Calibrated",
    METHOD_LOGISTIC: "Logistic Regression",
}
METHOD_ORDER = (METHOD_CALIBRATED, METHOD_LOGISTIC)

TABLE_HEADER = [
    "Village Sampling Proportion",
    "Participation Rate",
    "Method",
    "Bias",
    "Coverage (95% CI)",
    "TOST Equivalence ±5%",
    "TOST Equivalence ±7.5%",
]


def read_summary_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = []
        for row in csv.DictReader(fh):
            for key in row:
                if key in ("scenario_id", "method"):
                    continue
                row[key] = float(row[key])
            rows.append(row)
    if not rows:
        raise ValueError(f"summary file {path} is empty")
    return rows


def render_tables(summary_rows: list[dict]) -> str:
    """Markdown tables grouped by xi; rows ordered fraction desc, rate desc,
    Calibrated above Logistic Regression, mirroring the published layout."""
    xis = sorted({r["xi"] for r in summary_rows})
    by_key = {
        (r["xi"], r["village_fraction"], r["response_rate"], r["method"]): r
        for r in summary_rows
    }
    fractions = sorted({r["village_fraction"] for r in summary_rows}, reverse=True)
    rates = sorted({r["response_rate"] for r in summary_rows}, reverse=True)

    chunks = []
    for xi in xis:
        lines = [
            f"### Odds Ratio for Selection Bias = {xi:g}",
            "",
            "| " + " | ".join(TABLE_HEADER) + " |",
            "|" + "|".join("---" for _ in TABLE_HEADER) + "|",
        ]
        for frac in fractions:
            for rate in rates:
                for method in METHOD_ORDER:
                    row = by_key.get((xi, frac, rate, method))
                    if row is None:
                        continue
                    lines.append(
                        "| "
                        + " | ".join(
                            [
                                f"{frac:g}",
                                f"{rate:g}",
                                METHOD_LABELS.get(method, method),
                                format_bias(row["bias"]),
                                format_proportion(row["coverage"]),
                                format_equivalence(row["equiv05"]),
                                format_equivalence(row["equiv075"]),
                            ]
                        )
                        + " |"
                    )
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + "\n"


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_metric_lines(summary_rows: list[dict], out_dir: Path) -> list[Path]:
    """Long-format bias and coverage CSVs for the line-plot figures."""
    paths = []
    for metric in ("bias", "coverage"):
        rows = [
            [
                r["scenario_id"],
                repr(r["xi"]),
                repr(r["village_fraction"]),
                repr(r["response_rate"]),
                r["method"],
                repr(r[metric]),
                repr(r[f"{metric}_mcse"]),
            ]
            for r in summary_rows
        ]
        path = out_dir / f"{metric}_lines.csv"
        _write_csv(
            path,
            ["scenario_id", "xi", "village_fraction", "response_rate", "method", metric, "mcse"],
            rows,
        )
        paths.append(path)
    return paths


def write_zipper_data(records, factors, out_dir: Path) -> list[Path]:
    """Per scenario x method: replicate 95% intervals, thinnest first.

    Intervals are re-centred at the replicate truth so covering means
    containing zero; non-covering rows carry covered=0 for highlighting.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: dict[tuple[str, str], list] = {}
    for r in records:
        if r.failed:
            continue
        groups.setdefault((r.scenario_id, r.method), []).append(r)
    paths = []
    for (sid, method), recs in sorted(groups.items()):
        recs = sorted(recs, key=lambda r: (r.ci95[1] - r.ci95[0], r.rep_index))
        rows = []
        for rank, r in enumerate(recs):
            lo, hi = r.ci95
            rows.append(
                [
                    rank,
                    r.rep_index,
                    repr(r.p_true),
                    repr(r.p_hat),
                    repr(lo),
                    repr(hi),
                    repr(hi - lo),
                    repr(lo - r.p_true),
                    repr(hi - r.p_true),
                    int(r.covered),
                ]
            )
        path = out_dir / f"zipper_{sid}_{method}.csv"
        _write_csv(
            path,
            [
                "rank",
                "rep",
                "p_true",
                "p_hat",
                "ci95_lo",
                "ci95_hi",
                "width",
                "centered_lo",
                "centered_hi",
                "covered",
            ],
            rows,
        )
        paths.append(path)
    return paths


def write_tost_data(records, factors, out_dir: Path, deltas=(0.05, 0.075)) -> list[Path]:
    """Per scenario x method x delta: centred 90% intervals ordered by signed bias."""
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: dict[tuple[str, str], list] = {}
    for r in records:
        if r.failed:
            continue
        groups.setdefault((r.scenario_id, r.method), []).append(r)
    paths = []
    for (sid, method), recs in sorted(groups.items()):
        recs = sorted(recs, key=lambda r: (r.p_hat - r.p_true, r.rep_index))
        for delta in deltas:
            rows = []
            for rank, r in enumerate(recs):
                rows.append(
                    [
                        rank,
                        r.rep_index,
                        repr(r.p_hat - r.p_true),
                        repr(r.ci90[0] - r.p_true),
                        repr(r.ci90[1] - r.p_true),
                        repr(delta),
                        int(r.equivalent(delta)),
                    ]
                )
            tag = f"{delta:g}".replace(".", "")
            path = out_dir / f"tost_{sid}_{method}_d{tag}.csv"
            _write_csv(
                path,
                ["rank", "rep", "bias", "centered_lo", "centered_hi", "delta", "within"],
                rows,
            )
            paths.append(path)
    return paths


def generate_report(results_dir: Path, out_dir: Path | None = None) -> dict:
    """Render tables and emit all plot-data CSVs from a completed run directory."""
    results_dir = Path(results_dir)
    summary_path = results_dir / "summary.csv"
    replicates_path = results_dir / "replicates.csv"
    if not summary_path.exists():
        raise FileNotFoundError(f"missing {summary_path}; run the grid first")
    if not replicates_path.exists():
        raise FileNotFoundError(f"missing {replicates_path}; run the grid first")
    out_dir = Path(out_dir) if out_dir is not None else results_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    summary_rows = read_summary_csv(summary_path)
    tables = render_tables(summary_rows)
    tables_path = out_dir / "tables.md"
    tables_path.write_text(tables, encoding="utf-8")

    records, factors = read_records_csv(replicates_path)
    line_paths = write_metric_lines(summary_rows, out_dir)
    zipper_paths = write_zipper_data(records, factors, out_dir / "zipper")
    tost_paths = write_tost_data(records, factors, out_dir / "tost")
    return {
        "tables": tables_path,
        "lines": line_paths,
        "zipper": zipper_paths,
        "tost": tost_paths,
    }
