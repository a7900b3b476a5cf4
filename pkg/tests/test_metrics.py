import json

import numpy as np
import pytest

from factnli.data import Fact, FactBundle, NliLabel, Observation
from factnli.head import FactScores
from factnli.metrics import (
    EvaluationError,
    LevelReport,
    confusion_matrix,
    fact_level_report,
    load_fact_annotations,
    report_from_predictions,
)
from factnli.rules import Prediction

E, N, C = NliLabel.ENTAILMENT, NliLabel.NEUTRAL, NliLabel.CONTRADICTION
GOLD = [E, E, E, E, N, N, N, C, C, C]
PRED = [E, E, N, C, N, N, E, C, C, N]


def _pred(label, raw_c=(0.1,), raw_e=(0.1,)):
    raw = {"c": np.array(raw_c), "e": np.array(raw_e)}
    return Prediction(label, (), (), FactScores(raw, raw, raw))


def _dataset(labels, rounds=None):
    rounds = rounds or [None] * len(labels)
    return [Observation(f"o{i}", "p", "h", lab, FactBundle((Fact("f"),)), r) for i, (lab, r) in enumerate(zip(labels, rounds))]


def test_hand_computed_matrix():
    report = report_from_predictions(_dataset(GOLD), [_pred(p) for p in PRED])
    np.testing.assert_array_equal(report.observations.confusion, [[2, 1, 1], [1, 2, 0], [0, 1, 2]])
    pc = report.observations.per_class
    assert (pc[E].precision, pc[E].recall, pc[E].f1) == pytest.approx((2 / 3, 1 / 2, 4 / 7), rel=1e-15)
    assert (pc[N].precision, pc[N].recall, pc[N].f1) == pytest.approx((1 / 2, 2 / 3, 4 / 7), rel=1e-15)
    assert (pc[C].precision, pc[C].recall, pc[C].f1) == pytest.approx((2 / 3, 2 / 3, 2 / 3), rel=1e-15)
    m = report.observations.macro
    assert (m.precision, m.recall, m.f1) == pytest.approx((11 / 18, 11 / 18, 38 / 63), rel=1e-15)
    assert report.accuracy == 0.6


def test_all_correct():
    rep = report_from_predictions(_dataset(GOLD), [_pred(g) for g in GOLD])
    assert rep.accuracy == 1.0
    assert all(s.f1 == 1.0 for s in rep.observations.per_class.values())


def test_zero_division():
    level = LevelReport.from_labels([E, E], [E, E])
    assert level.per_class[C].precision == 0 and level.per_class[C].f1 == 0
    assert level.macro.f1 == pytest.approx(1 / 3)


def test_per_round_partition():
    rounds = ["R1", "R2"] * 5
    data = _dataset(GOLD, rounds)
    rep = report_from_predictions(data, [_pred(p) for p in PRED])
    for r in ("R1", "R2"):
        idx = [i for i, x in enumerate(rounds) if x == r]
        sub = report_from_predictions([data[i] for i in idx], [_pred(PRED[i]) for i in idx])
        assert rep.per_round[r] == sub.accuracy


def test_accuracy_is_trace_over_total():
    rng = np.random.default_rng(0)
    labels = list(NliLabel)
    for _ in range(50):
        g = [labels[i] for i in rng.integers(0, 3, size=20)]
        p = [labels[i] for i in rng.integers(0, 3, size=20)]
        level = LevelReport.from_labels(g, p)
        assert level.accuracy == np.trace(confusion_matrix(g, p)) / 20
        for s in level.per_class.values():
            assert s.f1 == pytest.approx(0 if s.precision + s.recall == 0 else 2 * s.precision * s.recall / (s.precision + s.recall))


def test_unlabeled_rejected():
    with pytest.raises(EvaluationError):
        report_from_predictions(_dataset([None]), [_pred(N)])


def test_fact_level(tmp_path):
    data = _dataset([C, E, N])
    preds = [_pred(C, [0.7], [0.1]), _pred(C, [0.6], [0.8]), _pred(N, [0.2], [0.3])]
    ann = {("o0", 0): C, ("o1", 0): E, ("o2", 0): N}
    level = fact_level_report(data, preds, ann)
    # fact o1 is predicted contradiction by precedence: FP for C, FN for E
    np.testing.assert_array_equal(level.confusion, [[0, 0, 1], [0, 1, 0], [0, 0, 1]])
    assert level.per_class[C].precision == 0.5
    assert level.per_class[E].recall == 0.0
    assert level.per_class[N].recall == 1.0

    with pytest.raises(EvaluationError, match="out of range"):
        fact_level_report(data, preds, {("o0", 3): C})
    with pytest.raises(EvaluationError, match="unknown observation"):
        fact_level_report(data, preds, {("zz", 0): C})

    path = tmp_path / "ann.jsonl"
    path.write_text("".join(json.dumps({"id": k[0], "fact_index": k[1], "label": v.value}) + "\n" for k, v in ann.items()))
    assert load_fact_annotations(path) == ann


def test_report_outputs():
    rep = report_from_predictions(_dataset(GOLD, ["R1"] * 10), [_pred(p) for p in PRED])
    rep.facts = LevelReport.from_labels(GOLD, PRED)
    d = json.loads(rep.to_json())
    assert d["accuracy"] == 0.6 and d["per_round_accuracy"] == {"R1": 0.6}
    assert "fact_level" in d and "denominator" in d["note"]
    table = rep.table()
    assert "Facts:" in table and "Obs:" in table
    assert "Macro." in table.splitlines()[0]
