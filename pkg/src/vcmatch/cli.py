"""Command-line entry points: synth, embed, dataset, train, evaluate, predict."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import dataset as ds
from . import pipeline
from .config import ConfigError, RunConfig, load_config, save_config
from .evaluation import emit_report
from .features import Provenance, read_features, write_features
from .graph import EventFormatError, fund, read_events, startup, write_events
from .model import InclusionModel, ModelConfig, embed_company, encode_fund, predict
from .node2vec import WalkConfig, embed_graph, load_embeddings, save_embeddings
from .numerics import NumericalError, ShapeError, load_checkpoint, save_checkpoint
from .synthgen import generate_events, generate_world, startup_records

log = logging.getLogger("vcmatch")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="vcmatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic world as event and feature files")
    p.add_argument("--out", required=True, type=Path)

    defaults = WalkConfig()
    p = sub.add_parser("embed", parents=[common], help="embed the investment graph up to a cutoff year")
    p.add_argument("--events", required=True, type=Path)
    p.add_argument("--cutoff", required=True, type=int)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--p", type=float, default=None, help=f"return bias (default {defaults.p})")
    p.add_argument("--q", type=float, default=None, help=f"in-out bias (default {defaults.q})")

    p = sub.add_parser("dataset", parents=[common], help="build the labelled example pool")
    p.add_argument("--events", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--cutoffs", type=int, nargs="+")

    for name, text in (("train", "train one model"), ("evaluate", "train and score structural settings")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--events", required=True, type=Path)
        p.add_argument("--features", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--structural", choices=pipeline.ARMS)
        if name == "evaluate":
            p.add_argument("--ablation", action="store_true", help="run all three structural settings")
            p.add_argument("--format", choices=("csv", "markdown"), default="markdown")

    p = sub.add_parser("predict", parents=[common], help="score candidates for one fund")
    p.add_argument("fund_id")
    p.add_argument("candidate_ids", nargs="+")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--events", required=True, type=Path)
    p.add_argument("--features", required=True, type=Path)
    p.add_argument("--embeddings", type=Path, help="precomputed embedding file for the cutoff")
    p.add_argument("--cutoff", type=int, help="context cutoff year (default: latest configured cutoff)")
    return parser


def _resolve(args, overrides: list[str] = (), base: dict | None = None) -> RunConfig:
    if args.config is not None and not Path(args.config).is_file():
        raise UsageError(f"config file {args.config} not found")
    config = load_config(args.config, list(args.set) + list(overrides), base)
    log.info("resolved config %s: %s", config.fingerprint(), json.dumps(config.to_dict(), sort_keys=True))
    return config


def _events(path: Path, config: RunConfig):
    return read_events(path, exclude_investor_types=config.dataset.exclude_investor_types)


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    if args.config is None:
        raise UsageError("synth requires --config")
    config = _resolve(args)
    fp = config.fingerprint()
    args.out.mkdir(parents=True, exist_ok=True)
    world = generate_world(config.world)
    events = generate_events(world)
    write_events(args.out / "events.csv", events, fp)
    write_features(args.out / "features.csv", startup_records(world, events), fp)
    save_config(args.out / "config.json", config)
    print(f"wrote {len(events)} events for {len(world.funds)} funds and {len(world.startups)} startups to {args.out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    extra = [f"walk.{k}={v}" for k, v in (("p", args.p), ("q", args.q)) if v is not None]
    config = _resolve(args, extra)
    events = ds.dedupe_events(_events(args.events, config))
    graph = pipeline.past_graph(events, args.cutoff)
    if graph.num_edges == 0:
        raise ValueError(f"no investments at or before {args.cutoff}")
    table = embed_graph(graph, config.walk, config.sgns)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_embeddings(args.out, table, config.fingerprint())
    print(f"embedded {len(table.vectors)} nodes from {graph.num_edges} edges up to {args.cutoff} into {args.out}")
    return EXIT_OK


def cmd_dataset(args) -> int:
    extra = [f"dataset.cutoffs={json.dumps(args.cutoffs)}"] if args.cutoffs else []
    config = _resolve(args, extra)
    fp = config.fingerprint()
    events = ds.dedupe_events(_events(args.events, config))
    pool = ds.build_pool(events, config.dataset.cutoffs, config.dataset.seed, config.dataset.exclude_future_positives)
    problems = ds.audit_leakage(pool, events)
    if problems:
        raise ValueError(f"{len(problems)} leakage violations, first: {problems[0]}")
    train_set, val_set = ds.train_val_split(pool, config.dataset.seed, config.dataset.train_fraction)
    args.out.mkdir(parents=True, exist_ok=True)
    for name, part in (("pool", pool), ("train", train_set), ("val", val_set)):
        ds.write_pool(args.out / f"{name}.csv", part, fp)
    positives = sum(e.label for e in pool)
    print(f"{len(pool)} examples ({positives} positive, {len(pool) - positives} negative): "
          f"{len(train_set)} train / {len(val_set)} validation")
    return EXIT_OK


def _load_inputs(args, config):
    events = _events(args.events, config)
    records = read_features(args.features)
    return pipeline.prepare(events, records, config)


def _write_history(path: Path, history: list[dict], fingerprint: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# fingerprint={fingerprint}\n")
        writer = csv.DictWriter(fh, fieldnames=["epoch", "split", "loss", "precision", "recall", "f1"])
        writer.writeheader()
        writer.writerows(history)


def _write_report(path: Path, text: str, fingerprint: str, fmt: str) -> None:
    marker = f"<!-- fingerprint={fingerprint} -->" if fmt == "markdown" else f"# fingerprint={fingerprint}"
    path.write_text(marker + "\n" + text, encoding="utf-8")


def _save_arm(out: Path, result: pipeline.ArmResult, config: RunConfig) -> str:
    cfg = config.replace("ablation", structural=result.arm)
    fp = cfg.fingerprint()
    _write_history(out / f"history_{result.arm}.csv", result.training.history, fp)
    save_checkpoint(out / f"best_{result.arm}.npz", result.model.params,
                    {"fingerprint": fp, "arm": result.arm, "run": cfg.to_dict(),
                     "model": asdict(result.model.config), "best_epoch": result.training.best_epoch})
    return fp


def cmd_train(args) -> int:
    extra = [f"ablation.structural={json.dumps(args.structural)}"] if args.structural else []
    config = _resolve(args, extra)
    data = _load_inputs(args, config)
    args.out.mkdir(parents=True, exist_ok=True)
    result = pipeline.train_arm(data, config, config.ablation.structural)
    fp = _save_arm(args.out, result, config)
    _write_report(args.out / f"report_{result.arm}.csv", emit_report([result.report], "csv"), fp, "csv")
    r = result.report
    print(f"{r.setting}: precision {r.precision:.4f} recall {r.recall:.4f} F1 {r.f1:.4f} "
          f"(best epoch {result.training.best_epoch})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    extra = [f"ablation.structural={json.dumps(args.structural)}"] if args.structural else []
    config = _resolve(args, extra)
    data = _load_inputs(args, config)
    args.out.mkdir(parents=True, exist_ok=True)
    arms = pipeline.ARMS if args.ablation else (config.ablation.structural,)
    results = []
    for arm in arms:
        try:
            results.append(pipeline.train_arm(data, config, arm))
        except NumericalError:
            log.exception("arm %s failed numerically; continuing", arm)
    if not results:
        raise NumericalError("every structural setting failed")
    for result in results:
        _save_arm(args.out, result, config)
    reports = [r.report for r in results]
    text = emit_report(reports, args.format)
    suffix = "md" if args.format == "markdown" else "csv"
    _write_report(args.out / f"report.{suffix}", text, config.fingerprint(), args.format)
    print(text, end="")
    return EXIT_OK if len(results) == len(arms) else EXIT_NUMERICAL


def cmd_predict(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    config = _resolve(args, base=None if args.config else meta["run"])
    model = InclusionModel(ModelConfig(**meta["model"]), params)
    arm = meta.get("arm", config.ablation.structural)
    cutoff = args.cutoff if args.cutoff is not None else max(config.dataset.cutoffs)

    events = ds.dedupe_events(_events(args.events, config))
    records = read_features(args.features)
    encoder = pipeline.feature_encoder(events, records, config)
    if encoder.dims != {m: model.config.input_dim(m) for m in encoder.dims}:
        raise ShapeError(f"feature widths {encoder.dims} do not match the checkpoint")
    if arm == "zero":
        table = None
    elif args.embeddings is not None:
        table = load_embeddings(args.embeddings)
    else:
        table = embed_graph(pipeline.past_graph(events, cutoff), config.walk, config.sgns)
    encoder.fit_scaler(cutoff, sorted({e.startup for e in events if e.year <= cutoff}))

    split = ds.split_by_cutoff(events, cutoff)
    context = ds.fund_context(split, fund(args.fund_id))
    if not context:
        raise ValueError(f"fund {args.fund_id} has no investments at or before {cutoff}")

    def bundle(node):
        return encoder.assemble_bundle(encoder.record(node), cutoff, table, Provenance.IMPUTED_MEAN,
                                       zero_all=(arm == "zero"))

    fund_vec = encode_fund(model, [embed_company(model, bundle(c)) for c in context])
    for key in args.candidate_ids:
        b = bundle(startup(key))
        prob = predict(model, fund_vec, embed_company(model, b))
        print(f"{key}\t{prob:.6f}\t{b.struct_provenance.value}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "embed": cmd_embed, "dataset": cmd_dataset, "train": cmd_train,
            "evaluate": cmd_evaluate, "predict": cmd_predict}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"vcmatch: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"vcmatch: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (EventFormatError, ValueError, KeyError, OSError) as exc:
        print(f"vcmatch: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
