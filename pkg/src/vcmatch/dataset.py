"""Temporal example construction: cutoff splits, positives, 4:6 negatives, 7:3 split."""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import InvestmentEvent, NodeId, fund, startup

log = logging.getLogger(__name__)

MAX_CONTEXT = 15
NEGATIVE_RATIO = 1.5  # 4 positives : 6 negatives


@dataclass(frozen=True)
class CutoffSplit:
    cutoff: int
    past: tuple[InvestmentEvent, ...]
    future: tuple[InvestmentEvent, ...]

    def startups(self) -> set[NodeId]:
        return {e.startup for e in self.past} | {e.startup for e in self.future}


@dataclass(frozen=True)
class LabeledExample:
    fund: NodeId
    context: tuple[NodeId, ...]
    candidate: NodeId
    label: int
    cutoff: int

    def __post_init__(self):
        if not self.context:
            raise ValueError(f"example for {self.fund} has an empty context")
        if len(self.context) > MAX_CONTEXT:
            raise ValueError(f"context of {len(self.context)} exceeds {MAX_CONTEXT}")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if self.label == 0 and self.candidate in self.context:
            raise ValueError(f"negative candidate {self.candidate} is in the fund's context")


def dedupe_events(events: Iterable[InvestmentEvent]) -> list[InvestmentEvent]:
    """Keep only the first investment of each (fund, startup) pair."""
    first: dict[tuple[NodeId, NodeId], InvestmentEvent] = {}
    for ev in events:
        key = (ev.fund, ev.startup)
        if key not in first or ev.time < first[key].time:
            first[key] = ev
    return sorted(first.values(), key=lambda e: (e.time, e.fund, e.startup))


def split_by_cutoff(events: Iterable[InvestmentEvent], cutoff: int) -> CutoffSplit:
    past, future = [], []
    for ev in events:
        (past if ev.year <= cutoff else future).append(ev)
    return CutoffSplit(cutoff, tuple(past), tuple(future))


def fund_context(split: CutoffSplit, fund_id: NodeId, max_len: int = MAX_CONTEXT) -> list[NodeId]:
    """The fund's most recent past investees, oldest first; empty if it has none."""
    first: dict[NodeId, tuple[int, int]] = {}
    for ev in split.past:
        if ev.fund == fund_id and (ev.startup not in first or ev.time < first[ev.startup]):
            first[ev.startup] = ev.time
    ordered = sorted(first, key=lambda s: (first[s], s.key))
    return ordered[-max_len:]


def _contexts(split: CutoffSplit, max_len: int = MAX_CONTEXT) -> dict[NodeId, tuple[NodeId, ...]]:
    first: dict[NodeId, dict[NodeId, tuple[int, int]]] = defaultdict(dict)
    for ev in split.past:
        seen = first[ev.fund]
        if ev.startup not in seen or ev.time < seen[ev.startup]:
            seen[ev.startup] = ev.time
    return {f: tuple(sorted(s, key=lambda c: (s[c], c.key))[-max_len:]) for f, s in first.items()}


def build_positives(split: CutoffSplit, max_len: int = MAX_CONTEXT) -> list[LabeledExample]:
    contexts = _contexts(split, max_len)
    seen = set()
    out = []
    for ev in sorted(split.future, key=lambda e: (e.time, e.fund, e.startup)):
        ctx = contexts.get(ev.fund)
        key = (ev.fund, ev.startup)
        if not ctx or key in seen:
            continue
        seen.add(key)
        out.append(LabeledExample(ev.fund, ctx, ev.startup, 1, split.cutoff))
    return out


def _allocate(total: int, weights: dict[NodeId, int]) -> dict[NodeId, int]:
    """Largest-remainder apportionment of ``total`` proportional to ``weights``."""
    denom = sum(weights.values())
    if denom == 0 or total == 0:
        return {k: 0 for k in weights}
    exact = {k: total * w / denom for k, w in weights.items()}
    alloc = {k: math.floor(v) for k, v in exact.items()}
    leftover = total - sum(alloc.values())
    for k in sorted(weights, key=lambda k: (-(exact[k] - alloc[k]), k))[:leftover]:
        alloc[k] += 1
    return alloc


def sample_negatives(split: CutoffSplit, positives: Sequence[LabeledExample], seed: int,
                     universe: Iterable[NodeId] | None = None, exclude_future: bool = True,
                     ratio: float = NEGATIVE_RATIO) -> list[LabeledExample]:
    """Draw round(ratio * |positives|) negatives, apportioned per fund by positive count.

    A fund's pool is the universe (default: every startup in the split)
    minus its past investees and, unless ``exclude_future`` is False, its
    future investees. Shortfalls from exhausted pools move to other funds.
    """
    pool_universe = sorted(set(universe) if universe is not None else split.startups())
    contexts = _contexts(split, max_len=10**9)
    recent = _contexts(split)
    future_of: dict[NodeId, set[NodeId]] = defaultdict(set)
    for ev in split.future:
        future_of[ev.fund].add(ev.startup)

    pos_count: dict[NodeId, int] = defaultdict(int)
    for ex in positives:
        pos_count[ex.fund] += 1
    total = math.floor(ratio * len(positives) + 0.5)

    pools = {}
    for f in sorted(pos_count):
        banned = set(contexts.get(f, ()))
        if exclude_future:
            banned |= future_of[f]
        pools[f] = [c for c in pool_universe if c not in banned]

    rng = np.random.default_rng([seed, split.cutoff])
    quota = _allocate(total, dict(pos_count))
    chosen: dict[NodeId, list[NodeId]] = {f: [] for f in pools}
    exhausted = set()
    remaining = total
    while remaining > 0:
        deficit = 0
        for f in sorted(quota):
            want = quota[f]
            if want == 0:
                continue
            taken = set(chosen[f])
            left = [c for c in pools[f] if c not in taken]
            take = min(want, len(left))
            if take:
                picks = rng.choice(len(left), size=take, replace=False)
                chosen[f].extend(left[i] for i in sorted(picks))
            if take < want:
                exhausted.add(f)
                deficit += want - take
        remaining = deficit
        if remaining == 0:
            break
        open_funds = {f: pos_count[f] for f in pools if f not in exhausted}
        if not open_funds:
            log.warning("cutoff %s: negative pools exhausted, %d negatives short", split.cutoff, remaining)
            break
        log.warning("cutoff %s: %d funds exhausted their negative pool; reallocating %d negatives",
                    split.cutoff, len(exhausted), remaining)
        quota = _allocate(remaining, open_funds)

    return [LabeledExample(f, recent[f], c, 0, split.cutoff) for f in sorted(chosen) for c in chosen[f]]


def build_cutoff_examples(events: Sequence[InvestmentEvent], cutoff: int, seed: int,
                          exclude_future: bool = True) -> list[LabeledExample]:
    split = split_by_cutoff(events, cutoff)
    positives = build_positives(split)
    return positives + sample_negatives(split, positives, seed, exclude_future=exclude_future)


def merge_cutoffs(per_cutoff: Iterable[Sequence[LabeledExample]]) -> list[LabeledExample]:
    return [ex for examples in per_cutoff for ex in examples]


def build_pool(events: Sequence[InvestmentEvent], cutoffs: Sequence[int], seed: int,
               exclude_future: bool = True) -> list[LabeledExample]:
    deduped = dedupe_events(events)
    return merge_cutoffs(build_cutoff_examples(deduped, y, seed, exclude_future) for y in sorted(cutoffs))


def train_val_split(pool: Sequence[LabeledExample], seed: int,
                    train_fraction: float = 0.7) -> tuple[list[LabeledExample], list[LabeledExample]]:
    if not pool:
        raise ValueError("cannot split an empty pool")
    n_train = math.floor(train_fraction * len(pool))
    order = np.random.default_rng(seed).permutation(len(pool))
    return [pool[i] for i in order[:n_train]], [pool[i] for i in order[n_train:]]


def audit_leakage(pool: Iterable[LabeledExample], events: Iterable[InvestmentEvent]) -> list[str]:
    """Every violation of the temporal protocol found in ``pool`` (empty list means clean)."""
    times: dict[tuple[NodeId, NodeId], list[tuple[int, int]]] = defaultdict(list)
    for ev in events:
        times[(ev.fund, ev.startup)].append(ev.time)
    problems = []
    for ex in pool:
        for c in ex.context:
            if not any(t[0] <= ex.cutoff for t in times.get((ex.fund, c), ())):
                problems.append(f"{ex.fund}@{ex.cutoff}: context {c} has no event at or before the cutoff")
        pair_times = times.get((ex.fund, ex.candidate), ())
        if ex.label == 1 and not any(t[0] > ex.cutoff for t in pair_times):
            problems.append(f"{ex.fund}@{ex.cutoff}: positive {ex.candidate} has no event after the cutoff")
        if ex.label == 0 and pair_times:
            problems.append(f"{ex.fund}@{ex.cutoff}: negative {ex.candidate} has a recorded investment")
    return problems


# --------------------------------------------------------------------------
# pool files

POOL_COLUMNS = ("cutoff", "fund_id", "context", "candidate_id", "label")


def write_pool(path: str | Path, pool: Iterable[LabeledExample], fingerprint: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if fingerprint:
            fh.write(f"# fingerprint={fingerprint}\n")
        writer = csv.writer(fh)
        writer.writerow(POOL_COLUMNS)
        for ex in pool:
            writer.writerow([ex.cutoff, ex.fund.key, "|".join(c.key for c in ex.context),
                             ex.candidate.key, ex.label])


def read_pool(path: str | Path) -> list[LabeledExample]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for line_no, row in enumerate(reader, start=2):
            try:
                out.append(LabeledExample(fund(row["fund_id"]), tuple(startup(k) for k in row["context"].split("|")),
                                          startup(row["candidate_id"]), int(row["label"]), int(row["cutoff"])))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from None
    return out
