"""Tier-constrained PCMCI over patient-period panels.

Each non-baseline variable gets a PC-style condition-selection pass over its
lagged candidates, followed by momentary conditional independence (MCI)
tests that condition on the selected parents of both endpoints.  Edges only
point forward in time (lag >= 1) and never from a later tier to an earlier
one, except for explicitly forced edges.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .citest import CITestResult, partial_corr_ranked, partial_corr_ranked_many, rank_columns
from .exceptions import ConfigError, DataError
from .graph import CausalGraph, LaggedEdge
from .panel import PanelDataset

log = logging.getLogger(__name__)

Candidate = tuple[str, int]


@dataclass(frozen=True)
class DiscoveryConfig:
    alpha_pc: float = 0.01
    alpha_mci: float = 0.005
    tau_max: int = 1
    max_cond_set: int = 10
    weighted: bool = True

    def __post_init__(self):
        if not 0 < self.alpha_mci <= self.alpha_pc < 1:
            raise ConfigError("need 0 < alpha_mci <= alpha_pc < 1")
        if self.tau_max < 1:
            raise ConfigError("tau_max must be >= 1")
        if self.max_cond_set < 0:
            raise ConfigError("max_cond_set must be >= 0")


@dataclass
class TierKnowledge:
    """Ordered variable tiers plus edges that are always present.

    A lagged edge ``a -> b`` is admissible when ``tier(a) <= tier(b)``.
    """

    tiers: list[list[str]]
    forced_edges: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.tiers = [list(t) for t in self.tiers]
        self.forced_edges = [tuple(e) for e in self.forced_edges]
        self._tier = {}
        for k, names in enumerate(self.tiers):
            for name in names:
                if name in self._tier:
                    raise ConfigError(f"variable {name!r} appears in more than one tier")
                self._tier[name] = k
        for src, dst in self.forced_edges:
            if src not in self._tier or dst not in self._tier:
                raise ConfigError(f"forced edge {src}->{dst} names an untiered variable")
            if self._tier[src] > self._tier[dst]:
                raise ConfigError(f"forced edge {src}->{dst} runs against tier order")

    @classmethod
    def from_specs(cls, specs, forced_edges=()) -> "TierKnowledge":
        n = max((s.tier for s in specs), default=-1) + 1
        tiers = [[s.name for s in specs if s.tier == k] for k in range(n)]
        return cls(tiers, list(forced_edges))

    def tier_of(self, name: str) -> int:
        try:
            return self._tier[name]
        except KeyError:
            raise ConfigError(f"variable {name!r} is not assigned to a tier") from None

    def admissible(self, source: str, target: str) -> bool:
        return self.tier_of(source) <= self.tier_of(target)

    def is_forced(self, source: str, target: str) -> bool:
        return (source, target) in self.forced_edges

    def forced_into(self, target: str) -> list[str]:
        return [s for s, t in self.forced_edges if t == target]

    def check_covers(self, names: Iterable[str]) -> None:
        missing = [n for n in names if n not in self._tier]
        if missing:
            raise ConfigError(f"variables without a tier: {missing}")

    def to_dict(self) -> dict:
        return {"tiers": self.tiers, "forced_edges": [list(e) for e in self.forced_edges]}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TierKnowledge":
        try:
            return cls(doc["tiers"], doc.get("forced_edges", []))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed tier knowledge: {exc}") from None


def read_knowledge(path) -> TierKnowledge:
    try:
        return TierKnowledge.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read tier knowledge {path}: {exc}") from None


# --- lagged design tables --------------------------------------------------


@dataclass
class LaggedDesign:
    """Complete-case regression table for one target.

    ``X[:, j]`` holds ``columns[j] = (variable, lag)`` observed at
    ``t - lag`` for the row's period ``t``; ``y`` is the target at ``t``.
    """

    target: str
    columns: list[Candidate]
    y: np.ndarray
    X: np.ndarray
    weights: np.ndarray
    rows: np.ndarray
    _ranked: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_rows(self) -> int:
        return self.y.shape[0]

    def ranked(self) -> np.ndarray:
        """Column ranks of ``[y, X]`` (cached)."""
        if self._ranked is None:
            self._ranked = rank_columns(np.column_stack([self.y, self.X]))
        return self._ranked

    def col(self, c: Candidate) -> int:
        return self.columns.index(c)


def candidates(panel: PanelDataset, target: str, knowledge: TierKnowledge | None, tau_max: int) -> list[Candidate]:
    """Admissible lagged parents of ``target`` in (name, lag) order.

    Baseline targets have no candidates.  Baseline sources enter at lag 1
    only (they are constant in time) and terminal outcomes never enter as
    sources (a patient's rows end when they fire).
    """
    if panel.spec(target).kind == "baseline":
        return []
    out = []
    for s in panel.variables:
        if s.terminal:
            continue
        if knowledge is not None and not knowledge.admissible(s.name, target):
            continue
        lags = [1] if s.kind == "baseline" else range(1, tau_max + 1)
        out.extend((s.name, lag) for lag in lags)
    if knowledge is not None:
        for src in knowledge.forced_into(target):
            if src in panel._index and (src, 1) not in out:
                out.append((src, 1))
    return sorted(out)


def build_design(panel: PanelDataset, target: str, columns: Sequence[Candidate], weighted: bool = True) -> LaggedDesign:
    """Rows ``(patient, t)`` with ``t >= max lag`` and every needed cell observed."""
    columns = list(columns)
    max_lag = max((lag for _, lag in columns), default=0)
    P = panel.n_periods
    if max_lag >= P:
        raise DataError(f"lag {max_lag} leaves no periods out of {P}")
    ts = np.arange(max_lag, P)
    yt = panel.column(target)[:, ts]
    cols = [panel.column(v)[:, ts - lag] for v, lag in columns]
    stack = np.stack([yt] + cols, axis=-1) if cols else yt[..., None]
    inside = ts[None, :] < panel.observed_periods[:, None]
    complete = inside & ~np.isnan(stack).any(axis=-1)
    if not complete.any():
        miss = np.isnan(stack[inside]).mean(axis=0) if inside.any() else np.ones(stack.shape[-1])
        names = [target] + [f"{v}(t-{lag})" for v, lag in columns]
        worst = [names[j] for j in np.argsort(-miss, kind="stable")[:5] if miss[j] > 0]
        raise DataError(f"no complete rows for target {target!r}; blocking: {worst or names}")
    pi, ti = np.nonzero(complete)
    w = panel.weights[pi, ts[ti]] if weighted else np.ones(pi.size)
    data = stack[pi, ti]
    return LaggedDesign(
        target=target,
        columns=columns,
        y=data[:, 0].copy(),
        X=data[:, 1:].copy(),
        weights=w,
        rows=np.column_stack([pi, ts[ti]]),
    )


def lagged_design(panel: PanelDataset, target: str, tau_max: int, knowledge: TierKnowledge | None = None, weighted: bool = True) -> LaggedDesign:
    if tau_max >= panel.n_periods:
        raise DataError("tau_max must be smaller than the number of periods")
    return build_design(panel, target, candidates(panel, target, knowledge, tau_max), weighted)


# --- PC condition selection ------------------------------------------------


def _order(cands: Iterable[Candidate], score: Mapping[Candidate, float]) -> list[Candidate]:
    return sorted(cands, key=lambda c: (-score.get(c, np.inf), c))


def _pc_select(design: LaggedDesign, forced: set, config: DiscoveryConfig) -> tuple[list[Candidate], dict]:
    R = design.ranked()
    ry = R[:, 0]
    w = design.weights if config.weighted else None
    pos = {c: j + 1 for j, c in enumerate(design.columns)}
    remaining = list(design.columns)
    score: dict[Candidate, float] = {}
    stat: dict[Candidate, CITestResult] = {}
    for q in range(config.max_cond_set + 1):
        if len(remaining) - 1 < q:
            break
        top = remaining[:q]
        nonsig = []
        # candidates outside the top q all condition on the same set
        shared = [c for c in remaining if c not in top]
        groups = [(shared, top)] + [([c], [d for d in remaining[: q + 1] if d != c]) for c in top]
        for group, Z in groups:
            if not group:
                continue
            RZ = R[:, [pos[d] for d in Z]]
            try:
                results = partial_corr_ranked_many(R[:, [pos[c] for c in group]], ry, RZ, w)
            except DataError:
                continue  # too few rows for this set: keep candidates
            for c, res in zip(group, results):
                score[c] = min(abs(res.statistic), score.get(c, np.inf))
                stat[c] = res
                if res.p_value >= config.alpha_pc and c not in forced:
                    nonsig.append(c)
        remaining = _order([c for c in remaining if c not in nonsig], score)
    return remaining, stat


def pc_parents(
    panel: PanelDataset,
    target: str,
    knowledge: TierKnowledge | None = None,
    config: DiscoveryConfig = DiscoveryConfig(),
) -> list[Candidate]:
    """Lagged parent candidates of ``target`` surviving PC selection.

    Candidates are tested at growing conditioning-set sizes ``q`` given the
    ``q`` strongest other survivors; those with ``p >= alpha_pc`` are dropped
    after each level.  Forced parents are never dropped.  The result is
    sorted by decreasing minimum |statistic|, ties by (name, lag).
    """
    cands = candidates(panel, target, knowledge, config.tau_max)
    if not cands:
        return []
    design = build_design(panel, target, cands, config.weighted)
    if np.ptp(design.y) == 0:
        log.warning("target %r is constant; no parents selected", target)
        return []
    forced = {(s, 1) for s in knowledge.forced_into(target)} if knowledge else set()
    parents, _ = _pc_select(design, forced, config)
    return parents


# --- MCI -------------------------------------------------------------------


def _mci_conditions(x: Candidate, target_parents, source_parents) -> list[Candidate]:
    src, lag = x
    conds = [p for p in target_parents if p != x]
    for v, l in source_parents:
        c = (v, l + lag)
        if c != x and c not in conds:
            conds.append(c)
    return conds


def _mci_target(
    panel: PanelDataset,
    target: str,
    parents_map: Mapping[str, Sequence[Candidate]],
    knowledge: TierKnowledge | None,
    config: DiscoveryConfig,
) -> list[LaggedEdge]:
    tp = list(parents_map.get(target, []))
    forced = knowledge.forced_into(target) if knowledge else []
    for src in forced:
        if src in panel._index and (src, 1) not in tp:
            tp.append((src, 1))
    if not tp:
        return []
    tests = [(x, _mci_conditions(x, tp, parents_map.get(x[0], []))) for x in tp]
    needed = sorted({c for x, z in tests for c in [x, *z]})
    design = build_design(panel, target, needed, config.weighted)
    R = design.ranked()
    pos = {c: j + 1 for j, c in enumerate(design.columns)}
    w = design.weights if config.weighted else None
    edges = []
    for x, z in tests:
        src, lag = x
        is_forced = src in forced and lag == 1
        try:
            res = partial_corr_ranked(R[:, pos[x]], R[:, 0], R[:, [pos[c] for c in z]], w)
        except DataError as exc:
            if not is_forced:
                log.warning("MCI test %s(t-%d) -> %s skipped: %s", src, lag, target, exc)
                continue
            res = partial_corr_ranked(R[:, pos[x]], R[:, 0], R[:, :0], w)
        if res.p_value < config.alpha_mci or is_forced:
            edges.append(LaggedEdge(src, lag, target, res.statistic, res.p_value))
    return edges


def _pool_map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def mci_edges(
    panel: PanelDataset,
    parents_map: Mapping[str, Sequence[Candidate]],
    knowledge: TierKnowledge | None = None,
    config: DiscoveryConfig = DiscoveryConfig(),
    jobs: int = 1,
) -> CausalGraph:
    """MCI tests for every candidate edge of every target in ``parents_map``.

    ``X(t-lag) -> Y(t)`` is tested given the other parents of ``Y`` and the
    parents of ``X`` shifted by ``lag``; it is kept when ``p < alpha_mci``
    or when forced.  Results merge in target order, so ``jobs`` does not
    affect the output.
    """
    targets = sorted(parents_map)
    fn = partial(_mci_target, panel, parents_map=parents_map, knowledge=knowledge, config=config)
    per_target = _pool_map(fn, targets, jobs)
    g = CausalGraph(tuple(panel.names))
    for edges in per_target:
        for e in edges:
            g.add(e)
    return g


def _pc_job(panel, knowledge, config, target):
    return pc_parents(panel, target, knowledge, config)


def run_pcmci(
    panel: PanelDataset,
    knowledge: TierKnowledge | None = None,
    config: DiscoveryConfig = DiscoveryConfig(),
    jobs: int = 1,
) -> CausalGraph:
    """PC selection for every variable, then MCI on the selected candidates."""
    if panel.n_patients == 0:
        raise DataError("empty panel")
    if knowledge is not None:
        knowledge.check_covers(panel.names)
    targets = [s.name for s in panel.variables if s.kind != "baseline"]
    found = _pool_map(partial(_pc_job, panel, knowledge, config), targets, jobs)
    parents_map = {s.name: [] for s in panel.variables}
    parents_map.update(zip(targets, found))
    return mci_edges(panel, parents_map, knowledge, config, jobs)


def markov_blanket(graph: CausalGraph, outcome: str) -> set[str]:
    """Lagged parents of ``outcome`` (its own past excluded).

    With lag-directed edges an outcome has no same-time children or
    spouses, so its blanket reduces to the sources of its inbound edges.
    """
    if outcome not in graph.nodes:
        raise DataError(f"unknown node {outcome!r}")
    return {e.source for e in graph.edges_into(outcome) if e.source != outcome}
