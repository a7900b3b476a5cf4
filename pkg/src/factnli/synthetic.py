"""Synthetic planted-fact NLI data that the hashing encoder can separate.

Every contradiction or entailment observation contains exactly one planted
fact carrying a class marker token; every other fact is noise. Noise words
and bigrams are rejected whenever they would hash into a marker's bucket, so
the marker coordinate is informative by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Fact, FactBundle, NliLabel, Observation, Provenance
from .encoder import HashingEncoder, bucket, features

_MARKER_CANDIDATES = {
    NliLabel.CONTRADICTION: ["never", "denied", "refuted", "impossible", "false", "untrue"],
    NliLabel.ENTAILMENT: ["indeed", "confirmed", "certainly", "verified", "true", "surely"],
}

_NOISE_WORDS = (
    "river city bridge garden window market teacher doctor village mountain ocean forest "
    "letter train station museum concert painter farmer island castle harbor library "
    "kitchen winter summer morning evening festival village road tower valley desert "
    "engine camera paper stone silver golden quiet bright ancient modern little large "
    "walked opened painted visited built wrote carried found moved sold bought played "
    "north south eastern western early late green blue red yellow"
).split()


@dataclass
class PlantedDataset:
    observations: list[Observation]
    planted: dict[str, int]  # observation id -> index of the planted fact
    markers: dict[NliLabel, str]


def _pick_markers(half: int) -> dict[NliLabel, str]:
    for c in _MARKER_CANDIDATES[NliLabel.CONTRADICTION]:
        for e in _MARKER_CANDIDATES[NliLabel.ENTAILMENT]:
            if bucket(c, half)[0] != bucket(e, half)[0]:
                return {NliLabel.CONTRADICTION: c, NliLabel.ENTAILMENT: e}
    raise ValueError("no marker pair with distinct buckets")


def make_planted_dataset(
    n_per_class: int = 200,
    seed: int = 0,
    encoder: HashingEncoder | None = None,
    facts_per_obs: tuple[int, int] = (3, 5),
    words_per_fact: tuple[int, int] = (4, 6),
) -> PlantedDataset:
    encoder = encoder or HashingEncoder()
    half = encoder.half
    rng = np.random.default_rng(seed)
    markers = _pick_markers(half)
    reserved = {bucket(m, half)[0] for m in markers.values()}
    vocab = [w for w in _NOISE_WORDS if bucket(w, half)[0] not in reserved]

    def clean(text: str, allow: str | None = None) -> bool:
        return all(f == allow or bucket(f, half)[0] not in reserved for f in features(text))

    def sample_text(marker: str | None = None) -> str:
        while True:
            n = int(rng.integers(words_per_fact[0], words_per_fact[1] + 1))
            words = list(rng.choice(vocab, size=n, replace=False))
            if marker is not None:
                words.insert(int(rng.integers(0, n + 1)), marker)
            text = " ".join(words)
            if clean(text, allow=marker):
                return text

    labels = [NliLabel.CONTRADICTION, NliLabel.ENTAILMENT, NliLabel.NEUTRAL] * n_per_class
    observations, planted = [], {}
    for k, label in enumerate(labels):
        obs_id = f"syn-{k:04d}"
        m = int(rng.integers(facts_per_obs[0], facts_per_obs[1] + 1))
        texts = [sample_text() for _ in range(m)]
        if label is not NliLabel.NEUTRAL:
            idx = int(rng.integers(0, m))
            texts[idx] = sample_text(markers[label])
            planted[obs_id] = idx
        hypothesis = sample_text()
        bundle = FactBundle(tuple(Fact(t, Provenance.LIST2) for t in texts))
        observations.append(
            Observation(obs_id, premise=". ".join(texts) + ".", hypothesis=hypothesis, label=label, bundle=bundle)
        )
    return PlantedDataset(observations, planted, markers)
