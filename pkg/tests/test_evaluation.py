import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcmatch.config import RunConfig
from vcmatch.evaluation import MetricReport, compute_metrics, emit_report, f1_score, parse_report


def test_f1_of_reported_precision_and_recall_rounds_to_three_quarters():
    assert round(f1_score(0.76, 0.74), 2) == 0.75
    assert f1_score(0.0, 0.0) == 0.0


def test_sigmoid_zero_threshold_counts_as_positive():
    report = compute_metrics(np.array([0.5, 0.49]), np.array([1, 0]))
    assert (report.tp, report.fp, report.tn, report.fn) == (1, 0, 1, 0)


def _oracle(preds, labels, threshold):
    counts = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for p, y in zip(preds, labels):
        key = ("t" if (p >= threshold) == bool(y) else "f") + ("p" if p >= threshold else "n")
        counts[key] += 1
    prec = counts["tp"] / (counts["tp"] + counts["fp"]) if counts["tp"] + counts["fp"] else 0.0
    rec = counts["tp"] / (counts["tp"] + counts["fn"]) if counts["tp"] + counts["fn"] else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return counts, prec, rec, f1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=50),
       st.sampled_from([0.3, 0.5, 0.7]))
def test_metrics_match_brute_force_counting(rows, threshold):
    preds, labels = np.array([r[0] for r in rows]), np.array([r[1] for r in rows])
    counts, prec, rec, f1 = _oracle(preds, labels, threshold)
    got = compute_metrics(preds, labels, threshold)
    assert (got.tp, got.fp, got.tn, got.fn) == tuple(counts[k] for k in ("tp", "fp", "tn", "fn"))
    assert got.precision == pytest.approx(prec, abs=1e-12)
    assert got.recall == pytest.approx(rec, abs=1e-12)
    assert got.f1 == pytest.approx(f1, abs=1e-12)
    assert got.count == len(rows)


def test_metric_input_errors():
    with pytest.raises(ValueError):
        compute_metrics(np.array([]), np.array([]))
    with pytest.raises(ValueError):
        compute_metrics(np.array([0.1, 0.2]), np.array([1]))
    with pytest.raises(ValueError):
        compute_metrics(np.array([0.1]), np.array([2]))


def test_report_round_trip_and_markdown():
    reports = [MetricReport("No structural (baseline)", 0.7, 0.66, 0.68, 33, 14, 40, 17),
               MetricReport("Full structural", 0.76, 0.74, 0.75, 37, 12, 42, 13)]
    back = parse_report(emit_report(reports, "csv"))
    for a, b in zip(reports, back):
        assert a.setting == b.setting and (a.tp, a.fp, a.tn, a.fn) == (b.tp, b.fp, b.tn, b.fn)
        assert round(a.f1, 2) == b.f1
    md = emit_report(reports, "markdown").splitlines()
    assert md[0] == "| Setting | Precision | Recall | F1 |"
    assert md[2] == "| No structural (baseline) | 0.70 | 0.66 | 0.68 |"
    with pytest.raises(ValueError):
        emit_report([])


def test_arm_fingerprints_differ_only_in_structural_setting():
    base = RunConfig()
    arms = {arm: base.replace("ablation", structural=arm) for arm in ("zero", "full", "imputed")}
    prints = {arm: cfg.fingerprint() for arm, cfg in arms.items()}
    assert len(set(prints.values())) == 3
    for a, b in itertools.combinations(arms.values(), 2):
        da, db = a.to_dict(), b.to_dict()
        diffs = [(s, k) for s in da for k in da[s] if da[s][k] != db[s][k]]
        assert diffs == [("ablation", "structural")]


def test_perfect_predictions_score_one():
    report = compute_metrics(np.array([0.9, 0.1, 0.8]), np.array([1, 0, 1]))
    assert (report.precision, report.recall, report.f1) == (1.0, 1.0, 1.0)
