"""Lag-directed causal graph container."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .exceptions import DataError


@dataclass(frozen=True)
class LaggedEdge:
    """``source(t - lag) -> target(t)`` annotated with its test result."""

    source: str
    lag: int
    target: str
    score: float = 0.0
    p_value: float = 0.0

    def __post_init__(self):
        if self.lag < 1:
            raise DataError(f"edge {self.source}->{self.target}: lag must be >= 1")

    @property
    def key(self) -> tuple[str, int, str]:
        return (self.source, self.lag, self.target)


@dataclass
class CausalGraph:
    nodes: tuple[str, ...]
    edges: dict[tuple[str, int, str], LaggedEdge] = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = tuple(self.nodes)
        node_set = set(self.nodes)
        for e in list(self.edges.values()):
            if e.source not in node_set or e.target not in node_set:
                raise DataError(f"edge {e.key} references an unknown node")

    @classmethod
    def from_edges(cls, nodes: Iterable[str], edges: Iterable[LaggedEdge]) -> "CausalGraph":
        g = cls(tuple(nodes))
        for e in edges:
            g.add(e)
        return g

    def add(self, edge: LaggedEdge) -> None:
        if edge.source not in self.nodes or edge.target not in self.nodes:
            raise DataError(f"edge {edge.key} references an unknown node")
        self.edges[edge.key] = edge

    def __iter__(self) -> Iterator[LaggedEdge]:
        return iter(self.sorted_edges())

    def __len__(self) -> int:
        return len(self.edges)

    def sorted_edges(self) -> list[LaggedEdge]:
        return [self.edges[k] for k in sorted(self.edges)]

    def edges_into(self, target: str) -> list[LaggedEdge]:
        return [e for e in self.sorted_edges() if e.target == target]

    def edges_from(self, source: str) -> list[LaggedEdge]:
        return [e for e in self.sorted_edges() if e.source == source]

    def key_set(self) -> set[tuple[str, int, str]]:
        return set(self.edges)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CausalGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges
