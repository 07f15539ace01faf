"""Bootstrap baseline for regional discrepancies between causal graphs.

The patients are split by region and each half gets its own discovery run;
the distance between the two graphs is then placed within the distribution
of the same distances over random, region-blind splits of the patients.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from .discovery import DiscoveryConfig, TierKnowledge, _pool_map, run_pcmci
from .exceptions import DataError
from .graph import CausalGraph
from .graphmetrics import contradictions, score_vector, shd, smape
from .panel import PanelDataset, random_partition, split_by_region

log = logging.getLogger(__name__)

METRICS = ("smape_treatment", "smape_all", "shd", "contradictions")
QUANTILES = (0.25, 0.5, 0.75)
MAX_ATTEMPTS = 3  # partitions tried per replicate before giving up


@dataclass(frozen=True)
class PartitionMetrics:
    smape_treatment: float
    smape_all: float
    shd: int
    contradictions: int
    # outcome -> (treatment_difference, mean_difference)
    per_outcome: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        reals = [self.smape_treatment, self.smape_all] + [v for p in self.per_outcome.values() for v in p]
        if not np.all(np.isfinite(reals)):
            raise DataError("partition metrics must be finite")
        if self.shd < 0 or self.contradictions < 0:
            raise DataError("shd and contradictions must be non-negative")

    def value(self, metric: str) -> float:
        return float(getattr(self, metric))


def _smape_or_zero(a, b) -> float:
    # two graphs without any edge of the requested kind agree perfectly
    if not a.entries and not b.entries:
        return 0.0
    return smape(a, b)


def _mean_abs_diff(gA: CausalGraph, gB: CausalGraph, keys) -> float:
    keys = sorted(keys)
    if not keys:
        return 0.0
    diffs = [abs(_score(gA, k) - _score(gB, k)) for k in keys]
    return float(np.mean(diffs))


def _score(g: CausalGraph, key) -> float:
    e = g.edges.get(key)
    return 0.0 if e is None else e.score


def partition_metrics(gA: CausalGraph, gB: CausalGraph, outcomes: Sequence[str], treatment: str) -> PartitionMetrics:
    """Distances between the graphs discovered on two patient partitions.

    ``per_outcome[o]`` holds ``|scoreA - scoreB|`` of the treatment edge into
    ``o`` (a missing edge scoring 0; averaged over lags when there are
    several) and the mean of the same difference over every edge into ``o``
    present in either graph.
    """
    outcomes = list(outcomes)
    per = {}
    for o in outcomes:
        keys = {e.key for g in (gA, gB) for e in g.edges_into(o)}
        treat_keys = {k for k in keys if k[0] == treatment}
        per[o] = (_mean_abs_diff(gA, gB, treat_keys), _mean_abs_diff(gA, gB, keys))
    return PartitionMetrics(
        smape_treatment=_smape_or_zero(score_vector(gA, outcomes, treatment), score_vector(gB, outcomes, treatment)),
        smape_all=_smape_or_zero(score_vector(gA, outcomes), score_vector(gB, outcomes)),
        shd=shd(gA, gB),
        contradictions=contradictions(gA, gB),
        per_outcome=per,
    )


@dataclass
class BootstrapReport:
    observed: PartitionMetrics
    replicates: list[PartitionMetrics]
    quantiles: dict[str, dict[float, float]]
    observed_quantile: dict[str, float]
    seed: int = 0
    attempts: int = 0

    @property
    def B(self) -> int:
        return len(self.replicates)


def replicate_seed(seed: int, b: int, attempt: int, B: int) -> np.random.SeedSequence:
    """Seed of replicate ``b``; retries move to the next block of ``B`` counters."""
    return np.random.SeedSequence([int(seed), b + attempt * B])


def _metric_keys(outcomes: Sequence[str]) -> list[str]:
    keys = list(METRICS)
    for o in outcomes:
        keys += [f"{o}:treatment_difference", f"{o}:mean_difference"]
    return keys


def _values(m: PartitionMetrics, key: str) -> float:
    if ":" in key:
        o, what = key.split(":", 1)
        return m.per_outcome[o][0 if what == "treatment_difference" else 1]
    return m.value(key)


def summarize(observed: PartitionMetrics, replicates: Sequence[PartitionMetrics], outcomes: Sequence[str]):
    """Empirical quartiles and observed quantile (fraction of replicates <= observed)."""
    quantiles, obs_q = {}, {}
    for key in _metric_keys(outcomes):
        vals = np.array([_values(r, key) for r in replicates], dtype=float)
        qs = np.quantile(vals, QUANTILES)
        quantiles[key] = {q: float(v) for q, v in zip(QUANTILES, qs)}
        obs_q[key] = float(np.mean(vals <= _values(observed, key)))
    return quantiles, obs_q


def _replicate(panel, knowledge, config, outcomes, treatment, seed, B, b):
    last = None
    for attempt in range(MAX_ATTEMPTS):
        a, c = random_partition(panel, replicate_seed(seed, b, attempt, B))
        try:
            gA, gC = run_pcmci(a, knowledge, config), run_pcmci(c, knowledge, config)
        except DataError as exc:
            last = exc
            continue
        return partition_metrics(gA, gC, outcomes, treatment), attempt + 1
    raise DataError(f"bootstrap replicate {b}: discovery failed on {MAX_ATTEMPTS} partitions ({last})")


def run_bootstrap(
    panel: PanelDataset,
    knowledge: TierKnowledge | None = None,
    config: DiscoveryConfig = DiscoveryConfig(),
    B: int = 100,
    seed: int = 0,
    jobs: int = 1,
    treatment: str = "treatment",
    regions: tuple[str, str] = ("West", "East"),
) -> BootstrapReport:
    """Regional discrepancy against ``B`` random-partition replicates.

    Parameters
    ----------
    panel : PanelDataset
        Every patient must belong to one of ``regions``.
    B : int
        Number of replicates.  A replicate whose partition breaks discovery
        (for instance a constant column in one half) is re-drawn with the
        next derived seed, at most ``MAX_ATTEMPTS`` times.
    seed : int
        Master seed; replicate ``b`` uses ``SeedSequence([seed, b + k*B])``
        on attempt ``k``, so results do not depend on ``jobs``.
    """
    if B < 1:
        raise DataError("bootstrap needs B >= 1")
    if panel.n_patients < 2:
        raise DataError("bootstrap needs at least two patients")
    outcomes = panel.outcomes()
    west, east = split_by_region(panel, regions)
    observed = partition_metrics(
        run_pcmci(west, knowledge, config, jobs), run_pcmci(east, knowledge, config, jobs), outcomes, treatment
    )
    fn = partial(_replicate, panel, knowledge, config, outcomes, treatment, int(seed), B)
    results = _pool_map(fn, range(B), jobs)
    replicates = [m for m, _ in results]
    quantiles, obs_q = summarize(observed, replicates, outcomes)
    return BootstrapReport(observed, replicates, quantiles, obs_q, int(seed), sum(n for _, n in results))


# --- output ------------------------------------------------------------------


def _metrics_dict(m: PartitionMetrics) -> dict:
    return {
        "smape_treatment": m.smape_treatment,
        "smape_all": m.smape_all,
        "shd": m.shd,
        "contradictions": m.contradictions,
        "per_outcome": {
            o: {"treatment_difference": td, "mean_difference": md} for o, (td, md) in m.per_outcome.items()
        },
    }


def _metrics_from_dict(d) -> PartitionMetrics:
    return PartitionMetrics(
        float(d["smape_treatment"]), float(d["smape_all"]), int(d["shd"]), int(d["contradictions"]),
        {o: (float(v["treatment_difference"]), float(v["mean_difference"])) for o, v in d["per_outcome"].items()},
    )


def report_to_dict(report: BootstrapReport) -> dict:
    """Structured report: observed row, observed quantile row, quartile rows,
    per-outcome table and the raw replicates."""
    outcomes = list(report.observed.per_outcome)
    per_outcome = []
    for o in outcomes:
        row = {"outcome": o}
        for what in ("treatment_difference", "mean_difference"):
            key = f"{o}:{what}"
            row[what] = {
                "observed": _values(report.observed, key),
                "observed_quantile": report.observed_quantile[key],
                **{f"q{int(q * 100)}": report.quantiles[key][q] for q in QUANTILES},
            }
        per_outcome.append(row)
    return {
        "B": report.B,
        "seed": report.seed,
        "attempts": report.attempts,
        "metrics": list(METRICS),
        "observed": {m: report.observed.value(m) for m in METRICS},
        "observed_quantile": {m: report.observed_quantile[m] for m in METRICS},
        "quantiles": {f"q{int(q * 100)}": {m: report.quantiles[m][q] for m in METRICS} for q in QUANTILES},
        "per_outcome": per_outcome,
        "replicates": [_metrics_dict(r) for r in report.replicates],
        "observed_detail": _metrics_dict(report.observed),
    }


def report_from_dict(doc) -> BootstrapReport:
    try:
        observed = _metrics_from_dict(doc["observed_detail"])
        reps = [_metrics_from_dict(r) for r in doc["replicates"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed bootstrap report: {exc}") from None
    quantiles, obs_q = summarize(observed, reps, list(observed.per_outcome))
    return BootstrapReport(observed, reps, quantiles, obs_q, int(doc.get("seed", 0)), int(doc.get("attempts", 0)))


def report_table(report: BootstrapReport) -> str:
    """Plain-text analogue of the regional-comparison table."""
    head = f"{'':<28}" + "".join(f"{m:>17}" for m in METRICS)
    lines = [head]

    def row(label, vals, fmt):
        lines.append(f"{label:<28}" + "".join(format(v, fmt).rjust(17) for v in vals))

    row("Observed regional measure", [report.observed.value(m) for m in METRICS], ".3f")
    row("Observed quantile", [report.observed_quantile[m] for m in METRICS], ".2f")
    for q in QUANTILES:
        row(f"Bootstrap {int(q * 100)}% quantile", [report.quantiles[m][q] for m in METRICS], ".3f")
    lines.append("")
    lines.append(f"{'outcome':<20}{'treat diff':>12}{'quantile':>10}{'mean diff':>12}{'quantile':>10}")
    for o in report.observed.per_outcome:
        td, md = report.observed.per_outcome[o]
        lines.append(
            f"{o:<20}{td:>12.3f}{report.observed_quantile[o + ':treatment_difference']:>10.2f}"
            f"{md:>12.3f}{report.observed_quantile[o + ':mean_difference']:>10.2f}"
        )
    return "\n".join(lines) + "\n"


def histogram_csv(report: BootstrapReport) -> str:
    """Long-format replicate values for external plotting; replicate -1 is observed."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["metric", "replicate", "value"])
    for m in METRICS:
        wr.writerow([m, -1, repr(report.observed.value(m))])
        for b, r in enumerate(report.replicates):
            wr.writerow([m, b, repr(r.value(m))])
    return buf.getvalue()
