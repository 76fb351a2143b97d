"""Investment events and the undirected fund–startup bipartite graph."""

from __future__ import annotations

import csv
import enum
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np


class Kind(str, enum.Enum):
    FUND = "fund"
    STARTUP = "startup"


@dataclass(frozen=True, order=True)
class NodeId:
    kind: Kind
    key: str

    def __post_init__(self):
        if not isinstance(self.kind, Kind):
            object.__setattr__(self, "kind", Kind(self.kind))
        if not self.key:
            raise ValueError("node key must be non-empty")

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.key}"

    @classmethod
    def parse(cls, text: str) -> "NodeId":
        kind, sep, key = text.partition(":")
        if not sep:
            raise ValueError(f"node id {text!r} is not of the form kind:key")
        return cls(Kind(kind), key)


def fund(key: str) -> NodeId:
    return NodeId(Kind.FUND, key)


def startup(key: str) -> NodeId:
    return NodeId(Kind.STARTUP, key)


class EventFormatError(ValueError):
    """A malformed investment record; the message names the offending record."""


@dataclass(frozen=True)
class InvestmentEvent:
    fund: NodeId
    startup: NodeId
    year: int
    ordinal: int = 0
    investor_type: str | None = None
    amount: float | None = None

    @property
    def time(self) -> tuple[int, int]:
        return (self.year, self.ordinal)

    def validate(self, where: str = "") -> None:
        label = where or repr(self)
        if not isinstance(self.fund, NodeId) or self.fund.kind is not Kind.FUND:
            raise EventFormatError(f"{label}: fund side must be a Fund node, got {self.fund!r}")
        if not isinstance(self.startup, NodeId) or self.startup.kind is not Kind.STARTUP:
            raise EventFormatError(f"{label}: startup side must be a Startup node, got {self.startup!r}")


class BipartiteGraph:
    """Immutable fund–startup graph. Build it with :func:`build_graph`."""

    def __init__(self, nodes: Iterable[NodeId], edges: Mapping[tuple[NodeId, NodeId], tuple[int, int]]):
        adj: dict[NodeId, set[NodeId]] = {n: set() for n in nodes}
        for f, s in edges:
            if f.kind is s.kind:
                raise ValueError(f"same-side edge {f} -- {s}")
            adj.setdefault(f, set()).add(s)
            adj.setdefault(s, set()).add(f)
        self._adj = {n: tuple(sorted(nb)) for n, nb in adj.items()}
        self._neighbor_sets = {n: frozenset(nb) for n, nb in adj.items()}
        self._edges = dict(edges)

    def __contains__(self, node: NodeId) -> bool:
        return node in self._adj

    def __len__(self) -> int:
        return len(self._adj)

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    def nodes(self, side: str = "both") -> list[NodeId]:
        kinds = _side_kinds(side)
        return sorted(n for n in self._adj if n.kind in kinds)

    def neighbors(self, node: NodeId) -> tuple[NodeId, ...]:
        try:
            return self._adj[node]
        except KeyError:
            raise KeyError(f"unknown node {node}") from None

    def has_edge(self, u: NodeId, v: NodeId) -> bool:
        return v in self._neighbor_sets.get(u, ())

    def edge_time(self, f: NodeId, s: NodeId) -> tuple[int, int]:
        return self._edges[(f, s)]

    def edges(self) -> Iterator[tuple[NodeId, NodeId, tuple[int, int]]]:
        for (f, s), t in sorted(self._edges.items()):
            yield f, s, t

    def degree(self, node: NodeId) -> int:
        return len(self.neighbors(node))

    def __eq__(self, other) -> bool:
        if not isinstance(other, BipartiteGraph):
            return NotImplemented
        return self._adj == other._adj and self._edges == other._edges


def _side_kinds(side: str) -> tuple[Kind, ...]:
    side = side.lower()
    if side == "both":
        return (Kind.FUND, Kind.STARTUP)
    if side in ("fund", "startup"):
        return (Kind(side),)
    raise ValueError(f"side must be fund, startup or both, got {side!r}")


def build_graph(events: Iterable[InvestmentEvent], extra_nodes: Iterable[NodeId] = ()) -> BipartiteGraph:
    """One edge per (fund, startup) pair, carrying the earliest event time."""
    edges: dict[tuple[NodeId, NodeId], tuple[int, int]] = {}
    nodes: set[NodeId] = set(extra_nodes)
    for i, ev in enumerate(events):
        ev.validate(f"event #{i}")
        nodes.add(ev.fund)
        nodes.add(ev.startup)
        key = (ev.fund, ev.startup)
        t = ev.time
        if key not in edges or t < edges[key]:
            edges[key] = t
    return BipartiteGraph(nodes, edges)


def degree(graph: BipartiteGraph, node: NodeId) -> int:
    return graph.degree(node)


def degree_histogram(graph: BipartiteGraph, side: str = "both") -> dict[int, int]:
    return dict(sorted(Counter(graph.degree(n) for n in graph.nodes(side)).items()))


def tail_slope(histogram: Mapping[int, int], kmin: int = 1, bins_per_decade: int = 5) -> float:
    """Least-squares log-log slope of the degree density on logarithmic bins.

    Counts in each bin are divided by the bin width, so the slope estimates
    the exponent of ``P(k) ~ k^slope``.
    """
    degrees = np.array([k for k in histogram if k >= kmin and histogram[k] > 0], dtype=float)
    if degrees.size < 2:
        raise ValueError("need at least two distinct degrees to fit a slope")
    counts = np.array([histogram[int(k)] for k in degrees], dtype=float)
    lo, hi = math.log10(degrees.min()), math.log10(degrees.max() + 1)
    n_bins = max(2, int(math.ceil((hi - lo) * bins_per_decade)))
    edges = np.logspace(lo, hi, n_bins + 1)
    mass, _ = np.histogram(degrees, bins=edges, weights=counts)
    width = np.diff(np.floor(edges))
    keep = (mass > 0) & (width > 0)
    if keep.sum() < 2:
        raise ValueError("degree range too narrow to fit a slope")
    centers = np.sqrt(edges[:-1] * edges[1:])[keep]
    density = mass[keep] / width[keep]
    slope, _ = np.polyfit(np.log10(centers), np.log10(density), 1)
    return float(slope)


# --------------------------------------------------------------------------
# event files

EVENT_COLUMNS = ("fund_id", "startup_id", "year", "month", "investor_type", "amount")
DEFAULT_EXCLUDED_INVESTORS = frozenset({"individual", "unknown", ""})


def read_events(path: str | Path, exclude_investor_types: Iterable[str] | None = DEFAULT_EXCLUDED_INVESTORS,
                year_range: tuple[int, int] | None = None) -> list[InvestmentEvent]:
    """Parse an event file; rows from excluded investor types are dropped.

    Set ``exclude_investor_types`` to ``None`` to keep every row. The filter
    only applies when the file carries an ``investor_type`` column.
    """
    excluded = None if exclude_investor_types is None else {t.lower() for t in exclude_investor_types}
    events = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(_skip_comments(fh))
        if reader.fieldnames is None:
            raise EventFormatError(f"{path}: missing header row")
        missing = {"fund_id", "startup_id", "year"} - set(reader.fieldnames)
        if missing:
            raise EventFormatError(f"{path}: header lacks required columns {sorted(missing)}")
        has_type = "investor_type" in reader.fieldnames
        for line_no, row in enumerate(reader, start=2):
            where = f"{path}:{line_no}"
            inv_type = (row.get("investor_type") or "").strip()
            if has_type and excluded is not None and inv_type.lower() in excluded:
                continue
            events.append(_parse_event_row(row, where, inv_type or None, year_range))
    return events


def _parse_event_row(row: dict, where: str, inv_type: str | None,
                     year_range: tuple[int, int] | None) -> InvestmentEvent:
    fid = (row.get("fund_id") or "").strip()
    sid = (row.get("startup_id") or "").strip()
    if not fid or not sid:
        raise EventFormatError(f"{where}: empty fund_id or startup_id")
    try:
        year = int(row["year"])
        month = int(row["month"]) if (row.get("month") or "").strip() else 0
        amount = float(row["amount"]) if (row.get("amount") or "").strip() else None
    except ValueError as exc:
        raise EventFormatError(f"{where}: {exc}") from None
    if year_range is not None and not (year_range[0] <= year <= year_range[1]):
        raise EventFormatError(f"{where}: year {year} outside valid range {year_range}")
    ev = InvestmentEvent(fund(fid), startup(sid), year, month, inv_type, amount)
    ev.validate(where)
    return ev


def write_events(path: str | Path, events: Iterable[InvestmentEvent], fingerprint: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if fingerprint:
            fh.write(f"# fingerprint={fingerprint}\n")
        writer = csv.writer(fh)
        writer.writerow(EVENT_COLUMNS)
        for ev in events:
            writer.writerow([ev.fund.key, ev.startup.key, ev.year, ev.ordinal or "",
                             ev.investor_type or "", "" if ev.amount is None else repr(ev.amount)])


def _skip_comments(lines):
    for line in lines:
        if not line.startswith("#"):
            yield line
