"""Second-order biased random walks and skip-gram negative-sampling embeddings."""

from __future__ import annotations

import bisect
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numba
import numpy as np

from .graph import BipartiteGraph, NodeId

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WalkConfig:
    p: float = 1.0
    q: float = 0.8
    walks_per_node: int = 10
    walk_length: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.p <= 0 or self.q <= 0:
            raise ValueError(f"p and q must be positive, got p={self.p}, q={self.q}")
        if self.walk_length < 2:
            raise ValueError(f"walk_length must be >= 2, got {self.walk_length}")
        if self.walks_per_node < 1:
            raise ValueError(f"walks_per_node must be >= 1, got {self.walks_per_node}")


@dataclass(frozen=True)
class SgnsConfig:
    dim: int = 128
    window: int = 5
    negatives_per_positive: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    min_learning_rate: float = 0.0001
    unigram_power: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.window < 1 or self.negatives_per_positive < 1:
            raise ValueError("dim, window and negatives_per_positive must all be >= 1")
        if self.epochs < 1 or self.learning_rate <= 0:
            raise ValueError("epochs must be >= 1 and learning_rate positive")


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[NodeId, np.ndarray]
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        for node, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise ValueError(f"vector for {node} has shape {vec.shape}, expected ({self.dim},)")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"vector for {node} is not finite")

    def __contains__(self, node: NodeId) -> bool:
        return node in self.vectors

    def __getitem__(self, node: NodeId) -> np.ndarray:
        return self.vectors[node]

    def __len__(self) -> int:
        return len(self.vectors)

    def restricted(self, keep: Iterable[NodeId]) -> "EmbeddingTable":
        keep = set(keep)
        return EmbeddingTable(self.dim, {n: v for n, v in self.vectors.items() if n in keep})


# --------------------------------------------------------------------------
# walks


def transition_weights(graph: BipartiteGraph, prev: NodeId, curr: NodeId, p: float, q: float) -> dict[NodeId, float]:
    """Unnormalised second-order weights for stepping out of ``curr``."""
    if not graph.has_edge(prev, curr):
        raise ValueError(f"{prev} is not adjacent to {curr}")
    weights = {}
    for x in graph.neighbors(curr):
        if x == prev:
            weights[x] = 1.0 / p
        elif graph.has_edge(x, prev):
            weights[x] = 1.0
        else:
            weights[x] = 1.0 / q
    return weights


def transition_distribution(graph: BipartiteGraph, prev: NodeId, curr: NodeId,
                            p: float = 1.0, q: float = 0.8) -> dict[NodeId, float]:
    weights = transition_weights(graph, prev, curr, p, q)
    total = sum(weights.values())
    return {x: w / total for x, w in weights.items()}


def generate_walks(graph: BipartiteGraph, config: WalkConfig) -> list[list[NodeId]]:
    """``walks_per_node`` walks from every node, in node order then walk order.

    Each walk draws from its own generator seeded by (seed, node index, walk
    index), so the result does not depend on how walks are scheduled.
    """
    if len(graph) == 0:
        raise ValueError("cannot walk an empty graph")
    nodes = graph.nodes()
    allowed = {1.0 / config.p, 1.0 / config.q}
    cache: dict[tuple[NodeId, NodeId], tuple[tuple[NodeId, ...], list[float]]] = {}

    def step_table(prev: NodeId, curr: NodeId):
        key = (prev, curr)
        hit = cache.get(key)
        if hit is None:
            weights = transition_weights(graph, prev, curr, config.p, config.q)
            stray = set(weights.values()) - allowed
            if stray:
                raise AssertionError(f"bipartite walk produced weights {stray} outside {{1/p, 1/q}}")
            cands = graph.neighbors(curr)
            cum = list(itertools.accumulate(weights[x] for x in cands))
            hit = (cands, [c / cum[-1] for c in cum])
            cache[key] = hit
        return hit

    walks = []
    for i, start in enumerate(nodes):
        for w in range(config.walks_per_node):
            rng = np.random.default_rng([config.seed, i, w])
            draws = rng.random(config.walk_length - 1).tolist()
            walk = [start]
            for u in draws:
                curr = walk[-1]
                nbrs = graph.neighbors(curr)
                if not nbrs:
                    break
                if len(walk) == 1:
                    walk.append(nbrs[min(int(u * len(nbrs)), len(nbrs) - 1)])
                else:
                    cands, cum = step_table(walk[-2], curr)
                    walk.append(cands[min(bisect.bisect_right(cum, u), len(cands) - 1)])
            walks.append(walk)
    return walks


# --------------------------------------------------------------------------
# skip-gram with negative sampling


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sgns_objective(w_in: np.ndarray, w_out: np.ndarray, centers: np.ndarray, contexts: np.ndarray,
                   negatives: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Negative SGNS log-likelihood summed over pairs, with its gradients.

    ``negatives`` has shape (pairs, k). Returns (loss, dL/dw_in, dL/dw_out).
    """
    u = w_in[centers]
    v = w_out[contexts]
    n = w_out[negatives]
    pos = np.einsum("ij,ij->i", u, v)
    neg = np.einsum("ij,ikj->ik", u, n)
    loss = -(np.sum(np.log(_sigmoid(pos))) + np.sum(np.log(_sigmoid(-neg))))
    g_pos = _sigmoid(pos) - 1.0              # dL/dpos
    g_neg = _sigmoid(neg)                    # dL/dneg
    grad_in = np.zeros_like(w_in)
    grad_out = np.zeros_like(w_out)
    np.add.at(grad_in, centers, g_pos[:, None] * v + np.einsum("ik,ikj->ij", g_neg, n))
    np.add.at(grad_out, contexts, g_pos[:, None] * u)
    np.add.at(grad_out, negatives.reshape(-1), (g_neg[:, :, None] * u[:, None, :]).reshape(-1, u.shape[1]))
    return float(loss), grad_in, grad_out


@numba.njit(cache=True, fastmath=True)
def _sgns_epoch(tokens, offsets, order, w_in, w_out, neg_cdf, window, k, lr0, lr_min,
                step0, total_steps, seed):
    np.random.seed(seed)
    dim = w_in.shape[1]
    grad_u = np.zeros(dim)
    loss = 0.0
    pairs = 0
    step = step0
    for oi in range(order.shape[0]):
        w = order[oi]
        start, end = offsets[w], offsets[w + 1]
        for pos in range(start, end):
            frac = step / total_steps
            lr = lr0 - (lr0 - lr_min) * frac
            if lr < lr_min:
                lr = lr_min
            step += 1
            center = tokens[pos]
            lo = max(start, pos - window)
            hi = min(end, pos + window + 1)
            for cpos in range(lo, hi):
                if cpos == pos:
                    continue
                ctx = tokens[cpos]
                for j in range(dim):
                    grad_u[j] = 0.0
                for s in range(k + 1):
                    if s == 0:
                        target = ctx
                        label = 1.0
                    else:
                        r = np.random.random()
                        target = np.searchsorted(neg_cdf, r, side="right")
                        if target >= neg_cdf.shape[0]:
                            target = neg_cdf.shape[0] - 1
                        label = 0.0
                    dot = 0.0
                    for j in range(dim):
                        dot += w_in[center, j] * w_out[target, j]
                    if dot > 30.0:
                        sig = 1.0
                    elif dot < -30.0:
                        sig = 0.0
                    else:
                        sig = 1.0 / (1.0 + np.exp(-dot))
                    if label == 1.0:
                        loss -= np.log(max(sig, 1e-12))
                    else:
                        loss -= np.log(max(1.0 - sig, 1e-12))
                    g = (label - sig) * lr
                    for j in range(dim):
                        grad_u[j] += g * w_out[target, j]
                        w_out[target, j] += g * w_in[center, j]
                for j in range(dim):
                    w_in[center, j] += grad_u[j]
                pairs += 1
    return loss, pairs, step


def train_sgns(walks: Sequence[Sequence[NodeId]], config: SgnsConfig) -> EmbeddingTable:
    """Skip-gram with negative sampling over walk co-occurrences.

    Plain sequential SGD with linearly decaying step size, as in word2vec;
    deterministic for a fixed seed. Returns the input-side vectors.
    """
    if not walks:
        raise ValueError("no walks to train on")
    vocab = sorted({n for walk in walks for n in walk})
    index = {n: i for i, n in enumerate(vocab)}
    tokens = np.fromiter((index[n] for walk in walks for n in walk), dtype=np.int64)
    offsets = np.zeros(len(walks) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(w) for w in walks])

    counts = np.bincount(tokens, minlength=len(vocab)).astype(np.float64)
    weights = counts ** config.unigram_power
    neg_cdf = np.cumsum(weights / weights.sum())

    rng = np.random.default_rng(config.seed)
    w_in = (rng.random((len(vocab), config.dim)) - 0.5) / config.dim
    w_out = np.zeros((len(vocab), config.dim))

    total_steps = float(tokens.size * config.epochs)
    step = 0
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(walks)).astype(np.int64)
        epoch_seed = int(rng.integers(0, 2**31 - 1))
        loss, pairs, step = _sgns_epoch(tokens, offsets, order, w_in, w_out, neg_cdf, config.window,
                                        config.negatives_per_positive, config.learning_rate,
                                        config.min_learning_rate, step, total_steps, epoch_seed)
        history.append(loss / max(pairs, 1))
        log.info("sgns epoch %d: mean pair loss %.4f over %d pairs", epoch + 1, history[-1], pairs)
    return EmbeddingTable(config.dim, {n: w_in[i].copy() for n, i in index.items()}, history)


def embed_graph(graph: BipartiteGraph, walk_config: WalkConfig, sgns_config: SgnsConfig) -> EmbeddingTable:
    return train_sgns(generate_walks(graph, walk_config), sgns_config)


def mean_embedding(table: EmbeddingTable, subset: Iterable[NodeId]) -> np.ndarray:
    """Component-wise mean of the vectors of ``subset``."""
    members = list(subset)
    if not members:
        raise ValueError("mean over an empty set of nodes (cutoff with no past companies?)")
    missing = [m for m in members if m not in table]
    if missing:
        raise KeyError(f"{len(missing)} nodes absent from the embedding table, e.g. {missing[0]}")
    return np.mean(np.stack([table[m] for m in members]), axis=0)


# --------------------------------------------------------------------------
# text format


def save_embeddings(path: str | Path, table: EmbeddingTable, fingerprint: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if fingerprint:
            fh.write(f"# fingerprint={fingerprint}\n")
        fh.write(f"dim={table.dim}\n")
        for node in sorted(table.vectors):
            fh.write(str(node) + " " + " ".join(repr(float(x)) for x in table.vectors[node]) + "\n")


def load_embeddings(path: str | Path) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    if not lines or not lines[0].startswith("dim="):
        raise ValueError(f"{path}: first line must be dim=<d>")
    dim = int(lines[0][4:])
    vectors = {}
    for ln in lines[1:]:
        if not ln.strip():
            continue
        head, *values = ln.split(" ")
        if len(values) != dim:
            raise ValueError(f"{path}: {head} has {len(values)} values, expected {dim}")
        vectors[NodeId.parse(head)] = np.array([float(v) for v in values])
    return EmbeddingTable(dim, vectors)


def vectors_as_matrix(table: EmbeddingTable, nodes: Sequence[NodeId]) -> np.ndarray:
    return np.stack([table[n] for n in nodes]) if nodes else np.zeros((0, table.dim))


def cosine_matrix(vectors: Mapping[NodeId, np.ndarray], nodes: Sequence[NodeId]) -> np.ndarray:
    mat = np.stack([vectors[n] for n in nodes])
    mat = mat / np.linalg.norm(mat, axis=1, keepdims=True)
    return mat @ mat.T
