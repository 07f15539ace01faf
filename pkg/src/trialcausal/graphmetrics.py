"""Comparing, pruning and serializing lag-directed causal graphs."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .exceptions import DataError
from .graph import CausalGraph, LaggedEdge

EdgeKey = tuple[str, int, str]
SCOPES = ("treatment_only", "all_covariates")


@dataclass(frozen=True)
class ScoreVector:
    entries: Mapping[EdgeKey, float]
    scope: str = "all_covariates"

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise DataError(f"unknown score scope {self.scope!r}")


def score_vector(graph: CausalGraph, targets: Iterable[str], source: str | None = None) -> ScoreVector:
    """Scores of edges into ``targets``, optionally restricted to one source."""
    targets = set(targets)
    entries = {
        e.key: e.score
        for e in graph.sorted_edges()
        if e.target in targets and (source is None or e.source == source)
    }
    return ScoreVector(entries, "treatment_only" if source is not None else "all_covariates")


def _same_nodes(g1: CausalGraph, g2: CausalGraph) -> None:
    if set(g1.nodes) != set(g2.nodes):
        raise DataError("graphs are defined over different node sets")


def shd(g1: CausalGraph, g2: CausalGraph) -> int:
    """Structural Hamming distance over lag-resolved edge keys.

    Every edge points forward in time, so orientation errors cannot occur
    and the distance is the size of the symmetric difference.
    """
    _same_nodes(g1, g2)
    return len(g1.key_set() ^ g2.key_set())


def smape(a: ScoreVector, b: ScoreVector) -> float:
    """Symmetric mean absolute percentage error between two score vectors.

    Mean over the union of keys of ``|a - b| / ((|a| + |b|) / 2)``, a missing
    key scoring 0 and a 0/0 term counting as 0.  The value lies in [0, 2];
    an edge present in only one vector contributes the maximum, 2.
    """
    if a.scope != b.scope:
        raise DataError("score vectors have different scopes")
    keys = sorted(set(a.entries) | set(b.entries))
    if not keys:
        raise DataError("smape of two empty score vectors is undefined")
    x = np.array([a.entries.get(k, 0.0) for k in keys])
    y = np.array([b.entries.get(k, 0.0) for k in keys])
    den = (np.abs(x) + np.abs(y)) / 2.0
    num = np.abs(x - y)
    ratio = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(ratio.mean())


def contradictions(g1: CausalGraph, g2: CausalGraph) -> int:
    """Number of shared edges whose scores have strictly opposite signs."""
    _same_nodes(g1, g2)
    shared = g1.key_set() & g2.key_set()
    return sum(1 for k in shared if g1.edges[k].score * g2.edges[k].score < 0)


def prune(graph: CausalGraph, min_out_degree: int, outcomes: Iterable[str] = ()) -> CausalGraph:
    """Drop non-outcome nodes with fewer than ``min_out_degree`` outbound edges.

    Self-lags do not count towards the out-degree.  Removal repeats until no
    further node falls below the threshold, so pruning is idempotent.
    """
    if min_out_degree < 0:
        raise DataError("min_out_degree must be >= 0")
    keep_always = set(outcomes)
    nodes = list(graph.nodes)
    edges = dict(graph.edges)
    while True:
        deg = {n: 0 for n in nodes}
        for s, _, t in edges:
            if s != t:
                deg[s] += 1
        drop = {n for n in nodes if n not in keep_always and deg[n] < min_out_degree}
        if not drop:
            break
        nodes = [n for n in nodes if n not in drop]
        edges = {k: e for k, e in edges.items() if k[0] not in drop and k[2] not in drop}
    return CausalGraph(tuple(nodes), edges)


def _dot_id(name: str) -> str:
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(graph: CausalGraph, name: str = "causal") -> str:
    """Graphviz digraph; negative-score edges are drawn dashed in blue."""
    lines = [f"digraph {_dot_id(name)} {{"]
    for n in graph.nodes:
        lines.append(f"  {_dot_id(n)};")
    for e in graph.sorted_edges():
        style = ', color="blue", style="dashed"' if e.score < 0 else ', color="red"'
        lines.append(
            f'  {_dot_id(e.source)} -> {_dot_id(e.target)} '
            f'[label="lag={e.lag}, s={e.score:.4f}"{style}];'
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_to_dict(graph: CausalGraph) -> dict:
    return {
        "nodes": list(graph.nodes),
        "edges": [
            {"source": e.source, "lag": e.lag, "target": e.target, "score": e.score, "p_value": e.p_value}
            for e in graph.sorted_edges()
        ],
    }


def graph_from_dict(doc: Mapping) -> CausalGraph:
    try:
        edges = [
            LaggedEdge(str(d["source"]), int(d["lag"]), str(d["target"]), float(d["score"]), float(d["p_value"]))
            for d in doc["edges"]
        ]
        return CausalGraph.from_edges(doc["nodes"], edges)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed graph document: {exc}") from None


def to_json(graph: CausalGraph) -> str:
    return json.dumps(graph_to_dict(graph), indent=1)


def from_json(text: str) -> CausalGraph:
    try:
        return graph_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid graph JSON: {exc}") from None


def outbound_table(graphs: Mapping[str, CausalGraph], source: str, targets: Iterable[str]) -> list[dict]:
    """Score and p-value of ``source -> target`` edges per named graph.

    One row per (target, lag) present in any graph; absent edges are None.
    """
    targets = list(targets)
    keys = sorted({(e.lag, t) for g in graphs.values() for t in targets for e in g.edges_into(t) if e.source == source})
    order = {t: i for i, t in enumerate(targets)}
    keys.sort(key=lambda k: (order[k[1]], k[0]))
    rows = []
    for lag, t in keys:
        row = {"target": t, "lag": lag}
        for name, g in graphs.items():
            e = g.edges.get((source, lag, t))
            row[name] = None if e is None else {"score": e.score, "p_value": e.p_value}
        rows.append(row)
    return rows
