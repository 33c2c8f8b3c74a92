"""Performance measures over replicate records: bias, coverage, equivalence, MCSEs."""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "ReplicateRecord",
    "ScenarioSummary",
    "bias",
    "coverage",
    "equivalence",
    "summarize",
    "format_proportion",
    "format_equivalence",
    "format_bias",
]

EQUIV_DELTAS = (0.05, 0.075)


@dataclass(frozen=True)
class ReplicateRecord:
    scenario_id: str
    rep_index: int
    method: str
    p_true: float
    p_hat: float | None = None
    se: float | None = None
    ci95: tuple[float, float] | None = None
    ci90: tuple[float, float] | None = None
    failed: bool = False
    failure_reason: str | None = None

    @property
    def covered(self) -> bool | None:
        if self.failed:
            return None
        return self.ci95[0] <= self.p_true <= self.ci95[1]

    def equivalent(self, delta: float) -> bool | None:
        """TOST call: the 90% interval sits strictly inside (p_true - d, p_true + d)."""
        if self.failed:
            return None
        lo, hi = self.ci90
        return self.p_true - delta < lo and hi < self.p_true + delta


@dataclass(frozen=True)
class ScenarioSummary:
    scenario_id: str
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


def _successes(records):
    return [r for r in records if not r.failed]


def bias(records) -> tuple[float, float]:
    """Mean of d_k = p_hat_k - p_true_k, with MCSE sqrt(var(d)/n)."""
    recs = _successes(records)
    n = len(recs)
    if n < 2:
        raise ValueError("bias needs at least 2 successful replicates")
    d = [r.p_hat - r.p_true for r in recs]
    mean = math.fsum(d) / n
    ss = math.fsum((v - mean) ** 2 for v in d)
    return mean, math.sqrt(ss / (n * (n - 1)))


def _proportion(flags) -> tuple[float, float]:
    n = len(flags)
    k = sum(1 for f in flags if f)  # integer counting keeps k/n exact
    p = k / n
    return p, math.sqrt(p * (1.0 - p) / n)


def coverage(records) -> tuple[float, float]:
    recs = _successes(records)
    if not recs:
        raise ValueError("coverage needs at least 1 successful replicate")
    return _proportion([r.covered for r in recs])


def equivalence(records, delta: float) -> tuple[float, float]:
    if delta <= 0:
        raise ValueError("delta must be positive")
    recs = _successes(records)
    if not recs:
        raise ValueError("equivalence needs at least 1 successful replicate")
    return _proportion([r.equivalent(delta) for r in recs])


def summarize(records) -> list[ScenarioSummary]:
    """Per (scenario, method) summaries; failures are excluded and counted."""
    groups: dict[tuple[str, str], list[ReplicateRecord]] = {}
    order: list[tuple[str, str]] = []
    for r in records:
        key = (r.scenario_id, r.method)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r)

    out = []
    for key in order:
        recs = groups[key]
        good = _successes(recs)
        n_fail = len(recs) - len(good)
        if len(good) < 2:
            # Metrics undefined; report the failure tally with NaN measures.
            nan = math.nan
            out.append(
                ScenarioSummary(key[0], key[1], len(good), n_fail, *([nan] * 9))
            )
            continue
        b, b_mcse = bias(recs)
        c, c_mcse = coverage(recs)
        e05, e05_mcse = equivalence(recs, 0.05)
        e075, e075_mcse = equivalence(recs, 0.075)
        out.append(
            ScenarioSummary(
                scenario_id=key[0],
                method=key[1],
                n_rep_effective=len(good),
                failure_count=n_fail,
                bias=b,
                bias_mcse=b_mcse,
                coverage=c,
                coverage_mcse=c_mcse,
                equiv05=e05,
                equiv05_mcse=e05_mcse,
                equiv075=e075,
                equiv075_mcse=e075_mcse,
                mean_se=math.fsum(r.se for r in good) / len(good),
            )
        )
    return out


def format_proportion(value: float) -> str:
    """Plain 3-decimal rendering (round-half-even), used for coverage."""
    return f"{value:.3f}"


def format_equivalence(value: float) -> str:
    """Equivalence columns cap at '>0.999', the table convention for near-1 values."""
    if value >= 0.9995:
        return ">0.999"
    return f"{value:.3f}"


def format_bias(value: float) -> str:
    s = f"{value:.3f}"
    return "0.000" if s == "-0.000" else s
