"""Logical rules linking fact-level scores to observation-level classes.

Training targets per gold label::

    contradiction -> y_c = 1, y_e = ABSTAIN
    entailment    -> y_c = 0, y_e = 1
    neutral       -> y_c = 0, y_e = 0

At evaluation a fact contradicts when its raw contradiction score exceeds the
threshold, entails when its raw entailment score does, and contradiction
takes precedence over entailment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import NliLabel
from .head import FactScores

ABSTAIN = None


@dataclass(frozen=True)
class SupervisionTargets:
    y_c: int
    y_e: int | None  # None means ABSTAIN

    @property
    def supervised(self) -> dict[str, int]:
        out = {"c": self.y_c}
        if self.y_e is not ABSTAIN:
            out["e"] = self.y_e
        return out


def derive_targets(label: NliLabel, exclusive_contradiction: bool = False) -> SupervisionTargets:
    """Map a gold label to head targets.

    ``exclusive_contradiction`` enables the stricter rule variant in which a
    contradiction observation may not contain an entailing fact, so the
    entailment head is trained towards 0 instead of abstaining.
    """
    if label is None:
        raise ValueError("cannot derive targets for an unlabeled observation")
    if label is NliLabel.CONTRADICTION:
        return SupervisionTargets(1, 0 if exclusive_contradiction else ABSTAIN)
    if label is NliLabel.ENTAILMENT:
        return SupervisionTargets(0, 1)
    return SupervisionTargets(0, 0)


@dataclass(frozen=True)
class Prediction:
    predicted: NliLabel
    contradiction_facts: tuple[int, ...]
    entailment_facts: tuple[int, ...]
    scores: FactScores | None = None


def classify(scores: FactScores, threshold: float = 0.5) -> Prediction:
    raw_c = np.asarray(scores.raw["c"])
    raw_e = np.asarray(scores.raw["e"])
    if raw_c.size == 0 or raw_e.size == 0:
        raise ValueError("classify needs at least one scored fact")
    contra = tuple(int(i) for i in np.flatnonzero(raw_c > threshold))
    entail = tuple(int(i) for i in np.flatnonzero(raw_e > threshold))
    if contra:
        label = NliLabel.CONTRADICTION
    elif entail:
        label = NliLabel.ENTAILMENT
    else:
        label = NliLabel.NEUTRAL
    return Prediction(label, contra, entail, scores)


def classify_fact(raw_c: float, raw_e: float, threshold: float = 0.5) -> NliLabel:
    """Fact-level label with the same precedence as observations."""
    if raw_c > threshold:
        return NliLabel.CONTRADICTION
    if raw_e > threshold:
        return NliLabel.ENTAILMENT
    return NliLabel.NEUTRAL


def classify_bruteforce(scores: FactScores, threshold: float = 0.5) -> Prediction:
    """Test oracle: a plain-loop restatement of the evaluation rules."""
    c_hits = []
    for i in range(len(scores.raw["c"])):
        if float(scores.raw["c"][i]) > threshold:
            c_hits.append(i)
    e_hits = []
    for i in range(len(scores.raw["e"])):
        if float(scores.raw["e"][i]) > threshold:
            e_hits.append(i)
    if len(c_hits) > 0:
        label = NliLabel.CONTRADICTION
    elif len(e_hits) > 0:
        label = NliLabel.ENTAILMENT
    else:
        label = NliLabel.NEUTRAL
    return Prediction(label, tuple(c_hits), tuple(e_hits), scores)


def explanation(prediction: Prediction, fact_texts: list[str], obs_id: str | None = None, gold: NliLabel | None = None) -> dict:
    """JSON-ready report naming the facts responsible for a prediction."""
    raw = prediction.scores.raw if prediction.scores is not None else None

    def rows(indices, head):
        return [
            {"index": i, "text": fact_texts[i], "score": None if raw is None else float(raw[head][i])}
            for i in indices
        ]

    if prediction.predicted is NliLabel.CONTRADICTION:
        responsible = rows(prediction.contradiction_facts, "c")
    elif prediction.predicted is NliLabel.ENTAILMENT:
        responsible = rows(prediction.entailment_facts, "e")
    else:
        responsible = []
    out = {
        "id": obs_id,
        "predicted": prediction.predicted.value,
        "responsible_facts": responsible,
        "contradiction_facts": rows(prediction.contradiction_facts, "c"),
        "entailment_facts": rows(prediction.entailment_facts, "e"),
    }
    if gold is not None:
        out["gold"] = gold.value
    return out
