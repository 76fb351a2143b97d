"""End-to-end wiring: events and records in, trained model and validation metrics out."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import dataset as ds
from . import synthgen
from .config import RunConfig
from .evaluation import ARM_LABELS, MetricReport, compute_metrics
from .features import CategoricalVocab, FeatureEncoder, HashingTextEncoder, Provenance, StartupRecord
from .graph import BipartiteGraph, InvestmentEvent, NodeId, build_graph
from .model import CompanyMatrix, EncodedExamples, InclusionModel, TrainResult, train
from .node2vec import EmbeddingTable, embed_graph

log = logging.getLogger(__name__)

ARMS = ("zero", "full", "imputed")


@dataclass
class PipelineData:
    events: list[InvestmentEvent]
    records: list[StartupRecord]
    pool: list[ds.LabeledExample]
    train: list[ds.LabeledExample]
    val: list[ds.LabeledExample]


@dataclass
class ArmResult:
    arm: str
    report: MetricReport
    model: InclusionModel
    training: TrainResult
    companies: CompanyMatrix
    val_set: EncodedExamples


def synthetic_inputs(config: RunConfig) -> tuple[synthgen.PlantedWorld, list[InvestmentEvent], list[StartupRecord]]:
    world = synthgen.generate_world(config.world)
    events = synthgen.generate_events(world)
    return world, events, synthgen.startup_records(world, events)


def prepare(events: Sequence[InvestmentEvent], records: Sequence[StartupRecord], config: RunConfig) -> PipelineData:
    events = ds.dedupe_events(events)
    pool = ds.build_pool(events, config.dataset.cutoffs, config.dataset.seed,
                         config.dataset.exclude_future_positives)
    if not pool:
        raise ValueError(f"no labelled examples for cutoffs {config.dataset.cutoffs}")
    tr, va = ds.train_val_split(pool, config.dataset.seed, config.dataset.train_fraction)
    log.info("pool of %d examples (%d positive): %d train / %d validation",
             len(pool), sum(e.label for e in pool), len(tr), len(va))
    return PipelineData(list(events), list(records), pool, tr, va)


def unseen_startups(events: Sequence[InvestmentEvent], fraction: float, seed: int) -> frozenset[NodeId]:
    """A seeded subset of startups treated as never seen by the graph embedding."""
    nodes = sorted({e.startup for e in events})
    count = math.floor(fraction * len(nodes))
    order = np.random.default_rng([seed, 7]).permutation(len(nodes))
    return frozenset(nodes[i] for i in order[:count])


def past_graph(events: Sequence[InvestmentEvent], cutoff: int,
               hidden: frozenset[NodeId] = frozenset()) -> BipartiteGraph:
    return build_graph(e for e in events if e.year <= cutoff and e.startup not in hidden)


def structural_tables(data: PipelineData, config: RunConfig, arm: str) -> dict[int, EmbeddingTable | None]:
    """One embedding table per cutoff, trained only on that cutoff's past graph."""
    if arm not in ARMS:
        raise ValueError(f"unknown structural arm {arm!r}")
    if arm == "zero":
        return {y: None for y in config.dataset.cutoffs}
    hidden = frozenset()
    if arm == "imputed":
        hidden = unseen_startups(data.events, config.ablation.unseen_fraction, config.ablation.unseen_seed)
    tables = {}
    for y in config.dataset.cutoffs:
        graph = past_graph(data.events, y, hidden)
        log.info("cutoff %d: embedding past graph with %d nodes, %d edges", y, len(graph), graph.num_edges)
        tables[y] = embed_graph(graph, config.walk, config.sgns)
    return tables


def feature_encoder(events: Sequence[InvestmentEvent], records: Sequence[StartupRecord],
                    config: RunConfig) -> FeatureEncoder:
    """Vocabulary from startups seen up to the latest cutoff; scalers per cutoff."""
    latest = max(config.dataset.cutoffs)
    seen = {e.startup for e in events if e.year <= latest}
    by_id = {r.id: r for r in records}
    vocab = CategoricalVocab.fit((by_id[s] for s in sorted(seen) if s in by_id), config.features.categorical_mode)
    encoder = FeatureEncoder(records, vocab, HashingTextEncoder(config.features.text_dim), config.sgns.dim)
    for y in config.dataset.cutoffs:
        encoder.fit_scaler(y, sorted({e.startup for e in events if e.year <= y}))
    return encoder


def encode_examples(encoder: FeatureEncoder, tables: dict[int, EmbeddingTable | None],
                    groups: Sequence[Sequence[ds.LabeledExample]], arm: str = "full",
                    ) -> tuple[CompanyMatrix, list[EncodedExamples]]:
    """Company rows keyed by (cutoff, startup) plus index-encoded example groups."""
    keys = sorted({(ex.cutoff, c) for group in groups for ex in group for c in (*ex.context, ex.candidate)})
    row_of = {k: i for i, k in enumerate(keys)}
    bundles = [encoder.assemble_bundle(encoder.record(node), cutoff, tables.get(cutoff),
                                       Provenance.IMPUTED_MEAN, zero_all=(arm == "zero"))
               for cutoff, node in keys]
    companies = CompanyMatrix.from_bundles(bundles)
    encoded = []
    for group in groups:
        ctx = np.full((len(group), ds.MAX_CONTEXT), -1, dtype=np.int64)
        cand = np.empty(len(group), dtype=np.int64)
        labels = np.empty(len(group), dtype=np.float64)
        for i, ex in enumerate(group):
            ctx[i, :len(ex.context)] = [row_of[(ex.cutoff, c)] for c in ex.context]
            cand[i] = row_of[(ex.cutoff, ex.candidate)]
            labels[i] = ex.label
        encoded.append(EncodedExamples(ctx, cand, labels))
    return companies, encoded


def train_arm(data: PipelineData, config: RunConfig, arm: str,
              tables: dict[int, EmbeddingTable | None] | None = None,
              on_epoch: Callable[[list[dict]], None] | None = None) -> ArmResult:
    """Train and score one structural arm; everything except the structural source is shared."""
    cfg = config.replace("ablation", structural=arm)
    if tables is None:
        tables = structural_tables(data, cfg, arm)
    encoder = feature_encoder(data.events, data.records, cfg)
    companies, (train_set, val_set) = encode_examples(encoder, tables, [data.train, data.val], arm)
    model = InclusionModel(cfg.model.model_config(**{f"{m}_dim": d for m, d in encoder.dims.items()}))
    result = train(model, companies, train_set, val_set, cfg.train, on_epoch=on_epoch)
    probs = model.predict_proba(companies, val_set)
    report = compute_metrics(probs, val_set.labels, cfg.train.threshold,
                             setting=ARM_LABELS[arm], fingerprint=cfg.fingerprint())
    log.info("%s: precision %.4f recall %.4f F1 %.4f", report.setting, report.precision, report.recall, report.f1)
    return ArmResult(arm, report, model, result, companies, val_set)
