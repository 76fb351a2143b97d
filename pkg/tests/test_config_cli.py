import json

import numpy as np
import pytest

from vcmatch.cli import main
from vcmatch.config import ConfigError, RunConfig, load_config, save_config
from vcmatch.dataset import audit_leakage, read_pool
from vcmatch.graph import read_events
from vcmatch.node2vec import load_embeddings
from vcmatch.numerics import load_checkpoint

TINY = {
    "world": {"n_funds": 40, "n_startups": 120, "mean_fund_degree": 6, "seed": 3},
    "walk": {"walks_per_node": 2, "walk_length": 8},
    "sgns": {"dim": 8, "epochs": 1},
    "features": {"text_dim": 16},
    "dataset": {"cutoffs": [2021, 2022]},
    "model": {"d_model": 8, "heads": 2, "fund_hidden": 8, "head_hidden": 8},
    "train": {"epochs": 2, "learning_rate": 0.003},
}


@pytest.fixture(scope="module")
def world_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "config.json").write_text(json.dumps(TINY))
    assert main(["synth", "--config", str(root / "config.json"), "--out", str(root / "world")]) == 0
    return root


def _io(world_dir):
    return ["--events", str(world_dir / "world" / "events.csv"), "--features", str(world_dir / "world" / "features.csv"),
            "--config", str(world_dir / "config.json")]


def test_unknown_keys_are_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown keys"):
        load_config(None, ["train.learnin_rate=0.1"])
    with pytest.raises(ConfigError, match="sections"):
        load_config(None, ["trian.epochs=1"])
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"walk": {"p": 1.0, "colour": "red"}}))
    with pytest.raises(ConfigError):
        load_config(path)


def test_overrides_and_round_trip(tmp_path):
    cfg = load_config(None, ["walk.q=0.5", "dataset.cutoffs=[2020]", "ablation.structural=zero"])
    assert cfg.walk.q == 0.5 and cfg.dataset.cutoffs == (2020,) and cfg.ablation.structural == "zero"
    save_config(tmp_path / "c.json", cfg)
    assert load_config(tmp_path / "c.json") == cfg
    assert load_config(tmp_path / "c.json").fingerprint() == cfg.fingerprint()
    with pytest.raises(ConfigError):
        load_config(None, ["ablation.structural=partial"])
    with pytest.raises(ConfigError):
        load_config(None, ["novalue"])


def test_defaults_match_documented_values():
    cfg = RunConfig()
    assert (cfg.walk.p, cfg.walk.q, cfg.walk.walks_per_node, cfg.walk.walk_length) == (1.0, 0.8, 10, 20)
    assert (cfg.train.learning_rate, cfg.train.batch_size) == (1e-5, 32)
    assert cfg.dataset.cutoffs == (2021, 2022, 2023) and cfg.dataset.train_fraction == 0.7


def test_synth_is_deterministic_and_readable(world_dir, tmp_path):
    assert main(["synth", "--config", str(world_dir / "config.json"), "--out", str(tmp_path / "again")]) == 0
    for name in ("events.csv", "features.csv", "config.json"):
        assert (tmp_path / "again" / name).read_bytes() == (world_dir / "world" / name).read_bytes()
    events_text = (world_dir / "world" / "events.csv").read_text()
    assert events_text.startswith("# fingerprint=")
    assert len(read_events(world_dir / "world" / "events.csv", exclude_investor_types=None)) > 100


def test_usage_errors_exit_with_one(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path)]) == 1
    assert main(["synth", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["embed", "--events", "x.csv"]) == 1
    assert "usage" in capsys.readouterr().err


def test_data_errors_exit_with_two(tmp_path):
    bad = tmp_path / "events.csv"
    bad.write_text("fund_id,startup_id,year\nF1,S1,notayear\n")
    assert main(["embed", "--events", str(bad), "--cutoff", "2021", "--out", str(tmp_path / "e.txt")]) == 2
    assert main(["dataset", "--events", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 2


def test_embed_defaults_and_cutoff(world_dir, tmp_path, caplog):
    out = tmp_path / "emb.txt"
    args = ["embed", "--events", str(world_dir / "world" / "events.csv"), "--cutoff", "2021", "--out", str(out),
            "--config", str(world_dir / "config.json"), "-v"]
    with caplog.at_level("INFO", logger="vcmatch"):
        assert main(args) == 0
    resolved = [r.getMessage() for r in caplog.records if "resolved config" in r.getMessage()]
    walk = json.loads(resolved[0].split(": ", 1)[1])["walk"]
    assert (walk["p"], walk["q"]) == (1.0, 0.8)
    table = load_embeddings(out)
    events = read_events(world_dir / "world" / "events.csv")
    past = {e.fund for e in events if e.year <= 2021} | {e.startup for e in events if e.year <= 2021}
    assert set(table.vectors) == past


def test_dataset_command_writes_clean_pools(world_dir, tmp_path):
    args = ["dataset", "--events", str(world_dir / "world" / "events.csv"), "--out", str(tmp_path),
            "--config", str(world_dir / "config.json")]
    assert main(args) == 0
    pool = read_pool(tmp_path / "pool.csv")
    train, val = read_pool(tmp_path / "train.csv"), read_pool(tmp_path / "val.csv")
    assert len(train) + len(val) == len(pool) and len(train) == int(0.7 * len(pool))
    assert audit_leakage(pool, read_events(world_dir / "world" / "events.csv")) == []
    positives = sum(e.label for e in pool)
    assert abs((len(pool) - positives) - 1.5 * positives) <= 2
    first = (tmp_path / "pool.csv").read_bytes()
    assert main(args) == 0
    assert (tmp_path / "pool.csv").read_bytes() == first


def test_train_writes_history_checkpoint_and_report(world_dir, tmp_path):
    assert main(["train", *_io(world_dir), "--out", str(tmp_path), "--structural", "full"]) == 0
    history = (tmp_path / "history_full.csv").read_text().splitlines()
    assert history[0].startswith("# fingerprint=")
    assert history[1] == "epoch,split,loss,precision,recall,f1"
    assert len(history) == 2 + 2 * TINY["train"]["epochs"]
    params, meta = load_checkpoint(tmp_path / "best_full.npz")
    assert meta["arm"] == "full" and history[0].endswith(meta["fingerprint"])
    assert all(np.all(np.isfinite(v)) for v in params.values())
    assert (tmp_path / "report_full.csv").exists()


def test_evaluate_ablation_reports_three_settings(world_dir, tmp_path):
    assert main(["evaluate", *_io(world_dir), "--out", str(tmp_path), "--ablation"]) == 0
    lines = (tmp_path / "report.md").read_text().splitlines()
    assert lines[0].startswith("<!-- fingerprint=")
    assert lines[1] == "| Setting | Precision | Recall | F1 |"
    assert [ln.split("|")[1].strip() for ln in lines[3:]] == [
        "No structural (baseline)", "Full structural", "Imputed structural (unseen)"]
    prints = {load_checkpoint(tmp_path / f"best_{arm}.npz")[1]["fingerprint"] for arm in ("zero", "full", "imputed")}
    assert len(prints) == 3


def test_predict_prints_probabilities_with_provenance(world_dir, tmp_path, capsys):
    assert main(["train", *_io(world_dir), "--out", str(tmp_path), "--structural", "full"]) == 0
    capsys.readouterr()
    events = read_events(world_dir / "world" / "events.csv")
    fund_id = next(e.fund.key for e in events if e.year <= 2021)
    known = next(e.startup.key for e in events if e.year <= 2021)
    late = next(e.startup.key for e in sorted(events, key=lambda e: -e.year)
                if all(o.year > 2022 for o in events if o.startup == e.startup))
    code = main(["predict", fund_id, known, late, "--checkpoint", str(tmp_path / "best_full.npz"),
                 "--events", str(world_dir / "world" / "events.csv"),
                 "--features", str(world_dir / "world" / "features.csv")])
    assert code == 0
    rows = [ln.split("\t") for ln in capsys.readouterr().out.strip().splitlines()]
    assert [r[0] for r in rows] == [known, late]
    assert all(0.0 < float(r[1]) < 1.0 for r in rows)
    assert [r[2] for r in rows] == ["observed", "imputed_mean"]
