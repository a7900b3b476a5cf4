"""Observation- and fact-level evaluation.

Precision, recall and F1 are 0 whenever their denominator is 0.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import NliLabel, Observation
from .head import LogicHeadParams, forward
from .rules import Prediction, classify, classify_fact

CLASSES = (NliLabel.ENTAILMENT, NliLabel.NEUTRAL, NliLabel.CONTRADICTION)
_INDEX = {c: i for i, c in enumerate(CLASSES)}
ZERO_DIVISION_NOTE = "P, R and F1 are 0 when their denominator is 0"


class EvaluationError(ValueError):
    pass


def confusion_matrix(gold: Iterable[NliLabel], predicted: Iterable[NliLabel]) -> np.ndarray:
    """3x3 counts indexed ``[gold, predicted]`` in (entailment, neutral, contradiction) order."""
    cm = np.zeros((3, 3), dtype=np.int64)
    for g, p in zip(gold, predicted, strict=True):
        cm[_INDEX[g], _INDEX[p]] += 1
    return cm


def _div(a: float, b: float) -> float:
    return a / b if b else 0.0


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float


def per_class_scores(cm: np.ndarray) -> dict[NliLabel, ClassScores]:
    out = {}
    for c, i in _INDEX.items():
        tp = cm[i, i]
        p = _div(tp, cm[:, i].sum())
        r = _div(tp, cm[i, :].sum())
        out[c] = ClassScores(p, r, _div(2 * p * r, p + r))
    return out


def macro(scores: dict[NliLabel, ClassScores]) -> ClassScores:
    vals = list(scores.values())
    return ClassScores(
        sum(s.precision for s in vals) / len(vals),
        sum(s.recall for s in vals) / len(vals),
        sum(s.f1 for s in vals) / len(vals),
    )


@dataclass
class LevelReport:
    confusion: np.ndarray
    per_class: dict[NliLabel, ClassScores]
    macro: ClassScores

    @classmethod
    def from_labels(cls, gold, predicted) -> "LevelReport":
        cm = confusion_matrix(gold, predicted)
        pc = per_class_scores(cm)
        return cls(cm, pc, macro(pc))

    @property
    def accuracy(self) -> float:
        return _div(np.trace(self.confusion), self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "confusion": {
                "order": [c.value for c in CLASSES],
                "counts": self.confusion.tolist(),
            },
            "per_class": {c.value: vars(s) for c, s in self.per_class.items()},
            "macro": vars(self.macro),
        }


@dataclass
class MetricsReport:
    accuracy: float
    per_round: dict[str, float]
    observations: LevelReport
    facts: LevelReport | None = None
    n: int = 0
    threshold: float = 0.5
    predictions: list[Prediction] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        out = {
            "note": ZERO_DIVISION_NOTE,
            "n": self.n,
            "threshold": self.threshold,
            "accuracy": self.accuracy,
            "per_round_accuracy": dict(sorted(self.per_round.items())),
            "observation_level": self.observations.to_dict(),
        }
        if self.facts is not None:
            out["fact_level"] = self.facts.to_dict()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        """Aligned text table with Facts:/Obs: blocks of P/R/F1 rows."""
        header = f"{'':>12}{'Ent.':>8}{'Neut.':>8}{'Cont.':>8}{'Macro.':>8}"
        lines = [header]
        blocks = [("Facts:", self.facts), ("Obs:", self.observations)]
        for title, level in blocks:
            if level is None:
                continue
            lines.append(title)
            for metric, label in (("precision", "Precision"), ("recall", "Recall"), ("f1", "F1")):
                vals = [getattr(level.per_class[c], metric) for c in CLASSES] + [getattr(level.macro, metric)]
                lines.append(f"{label:>12}" + "".join(f"{v:8.2f}" for v in vals))
        lines.append(f"Accuracy: {self.accuracy:.4f} (n={self.n})")
        for rnd, acc in sorted(self.per_round.items()):
            lines.append(f"  {rnd}: {acc:.4f}")
        lines.append(f"({ZERO_DIVISION_NOTE})")
        return "\n".join(lines)


def predict(dataset: Sequence[Observation], params: LogicHeadParams, encoder, threshold: float = 0.5) -> list[Prediction]:
    out = []
    for obs in dataset:
        R = encoder.encode_facts(obs.id, [f.text for f in obs.facts], obs.hypothesis)
        out.append(classify(forward(R, params)[0], threshold))
    return out


def report_from_predictions(
    dataset: Sequence[Observation], predictions: Sequence[Prediction], threshold: float = 0.5
) -> MetricsReport:
    for obs in dataset:
        if obs.label is None:
            raise EvaluationError(f"observation {obs.id!r} has no gold label")
    gold = [obs.label for obs in dataset]
    pred = [p.predicted for p in predictions]
    level = LevelReport.from_labels(gold, pred)
    groups: dict[str, list[bool]] = defaultdict(list)
    for obs, g, p in zip(dataset, gold, pred):
        if obs.round is not None:
            groups[obs.round].append(g is p)
    per_round = {r: sum(v) / len(v) for r, v in groups.items()}
    return MetricsReport(level.accuracy, per_round, level, None, len(dataset), threshold, list(predictions))


def evaluate(dataset: Sequence[Observation], params: LogicHeadParams, encoder, threshold: float = 0.5) -> MetricsReport:
    for obs in dataset:
        if obs.label is None:
            raise EvaluationError(f"observation {obs.id!r} has no gold label")
    return report_from_predictions(dataset, predict(dataset, params, encoder, threshold), threshold)


def load_fact_annotations(path: str | Path) -> dict[tuple[str, int], NliLabel]:
    out = {}
    with Path(path).open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out[(str(rec["id"]), int(rec["fact_index"]))] = NliLabel.parse(rec["label"])
            except (KeyError, ValueError, TypeError) as e:
                raise EvaluationError(f"{path}:{lineno}: {e}") from None
    return out


def fact_level_report(
    dataset: Sequence[Observation],
    predictions: Sequence[Prediction],
    annotations: dict[tuple[str, int], NliLabel],
    threshold: float = 0.5,
) -> LevelReport:
    by_id = {obs.id: (obs, pred) for obs, pred in zip(dataset, predictions)}
    gold, pred = [], []
    for (obs_id, idx), label in sorted(annotations.items()):
        if obs_id not in by_id:
            raise EvaluationError(f"fact annotation refers to unknown observation {obs_id!r}")
        obs, p = by_id[obs_id]
        if not 0 <= idx < len(obs.facts):
            raise EvaluationError(f"fact annotation ({obs_id!r}, {idx}) is out of range for {len(obs.facts)} facts")
        gold.append(label)
        pred.append(classify_fact(float(p.scores.raw["c"][idx]), float(p.scores.raw["e"][idx]), threshold))
    return LevelReport.from_labels(gold, pred)


def evaluate_facts(
    dataset: Sequence[Observation],
    annotations: dict[tuple[str, int], NliLabel],
    params: LogicHeadParams,
    encoder,
    threshold: float = 0.5,
) -> LevelReport:
    return fact_level_report(dataset, predict(dataset, params, encoder, threshold), annotations, threshold)
