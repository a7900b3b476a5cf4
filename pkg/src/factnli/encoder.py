"""Joint (fact, hypothesis) representations.

The built-in :class:`HashingEncoder` is a lexical feature-hashing encoder:

* text is lower-cased and split on ``\\w+``; features are the unigrams plus
  the space-joined bigrams;
* each feature is hashed with 64-bit BLAKE2b (little-endian). The bucket is
  ``hash % (d // 2)`` and the sign is ``+1`` when bit 63 of the hash is clear,
  ``-1`` otherwise;
* every occurrence adds ``sign / sqrt(n)`` (``n`` = feature count of that
  text) to its bucket, then the block is rescaled to unit L2 norm;
* fact features fill coordinates ``[0, d/2)``, hypothesis features fill
  ``[d/2, d)`` and coordinate ``d`` holds the cosine similarity of the two
  feature multisets.

So a representation has ``d + 1`` entries and L2 norm at most ``sqrt(3)``.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


class EncoderError(ValueError):
    pass


class DimensionMismatch(EncoderError):
    pass


class Encoder(Protocol):
    dim: int

    def encode_facts(self, obs_id: str, facts: Sequence[str], hypothesis: str) -> np.ndarray:
        """Return an ``(len(facts), dim)`` array, one row per fact."""
        ...


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def features(text: str) -> list[str]:
    toks = tokenize(text)
    return toks + [f"{a} {b}" for a, b in zip(toks, toks[1:])]


def feature_hash(feature: str) -> int:
    return int.from_bytes(hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest(), "little")


def bucket(feature: str, half: int) -> tuple[int, float]:
    h = feature_hash(feature)
    return h % half, (-1.0 if h >> 63 else 1.0)


def _cosine(a: Counter, b: Counter) -> float:
    if not a or not b:
        return 0.0
    dot = sum(v * b[k] for k, v in a.items() if k in b)
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    return dot / (na * nb)


class HashingEncoder:
    def __init__(self, d: int = 64):
        if d < 2 or d % 2:
            raise ValueError("d must be an even integer >= 2")
        self.d = d
        self.half = d // 2
        self.dim = d + 1

    def config(self) -> dict:
        return {"kind": "hashing", "d": self.d}

    def _block(self, feats: list[str]) -> np.ndarray:
        block = np.zeros(self.half)
        if not feats:
            return block
        w = 1.0 / math.sqrt(len(feats))
        for feat in feats:
            idx, sign = bucket(feat, self.half)
            block[idx] += sign * w
        norm = np.linalg.norm(block)
        if norm > 0:
            block /= norm
        return block

    def encode(self, fact_text: str, hypothesis_text: str) -> np.ndarray:
        if not fact_text.strip() or not hypothesis_text.strip():
            raise EncoderError("cannot encode an empty string")
        ff, hf = features(fact_text), features(hypothesis_text)
        out = np.empty(self.dim)
        out[: self.half] = self._block(ff)
        out[self.half : self.d] = self._block(hf)
        out[self.d] = _cosine(Counter(ff), Counter(hf))
        return out

    def encode_facts(self, obs_id: str, facts: Sequence[str], hypothesis: str) -> np.ndarray:
        return np.stack([self.encode(f, hypothesis) for f in facts])


class PrecomputedEncoder:
    """Serves vectors from a JSONL file of ``{"id", "fact_index", "vector"}``.

    ``fact_index`` refers to the position of the fact in the observation's
    fact list as fed to the model (after the fact strategy is applied).
    """

    def __init__(self, table: dict[tuple[str, int], np.ndarray], dim: int, source: str | None = None):
        self.table = table
        self.dim = dim
        self.source = source

    def config(self) -> dict:
        return {"kind": "precomputed", "d": self.dim, "path": self.source}

    def lookup(self, obs_id: str, fact_index: int) -> np.ndarray:
        try:
            return self.table[(obs_id, fact_index)]
        except KeyError:
            raise EncoderError(f"no precomputed vector for ({obs_id!r}, {fact_index})") from None

    def encode_facts(self, obs_id: str, facts: Sequence[str], hypothesis: str) -> np.ndarray:
        return np.stack([self.lookup(obs_id, i) for i in range(len(facts))])


def load_precomputed(path: str | Path, d: int | None = None) -> PrecomputedEncoder:
    table: dict[tuple[str, int], np.ndarray] = {}
    dim = d
    with Path(path).open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            vec = np.asarray(rec["vector"], dtype=float)
            if dim is None:
                dim = vec.shape[0]
            if vec.ndim != 1 or vec.shape[0] != dim:
                raise DimensionMismatch(f"{path}:{lineno}: vector has dimension {vec.shape[-1]}, expected {dim}")
            if not np.all(np.isfinite(vec)):
                raise EncoderError(f"{path}:{lineno}: non-finite vector entry")
            table[(str(rec["id"]), int(rec["fact_index"]))] = vec
    if dim is None:
        raise EncoderError(f"{path}: no vectors")
    return PrecomputedEncoder(table, dim, str(path))


def encoder_from_config(cfg: dict):
    if cfg.get("kind", "hashing") == "hashing":
        return HashingEncoder(int(cfg.get("d", 64)))
    return load_precomputed(cfg["path"], int(cfg["d"]))
