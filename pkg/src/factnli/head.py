"""Dual attention heads over per-fact representations.

For each head ``x`` in ``("c", "e")`` and fact representation ``R_i``::

    logit_i  = w_logit . R_i + b_logit
    raw_i    = sigmoid(w2 . tanh(W1 R_i + b1) + b2)
    norm_i   = raw_i / sum_k raw_k
    L        = sum_i norm_i * logit_i
    p        = sigmoid(w3 * L + b3)

``raw_i`` is the per-fact score compared against the decision threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

HEADS = ("c", "e")
FORMAT_VERSION = 1


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


@dataclass
class HeadParams:
    W1: np.ndarray  # (h, d)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (h,)
    b2: float
    Wlogit: np.ndarray  # (d,)
    blogit: float
    W3: float
    b3: float

    @classmethod
    def init(cls, d: int, h: int, rng: np.random.Generator) -> "HeadParams":
        a1, a2 = 1.0 / np.sqrt(d), 1.0 / np.sqrt(h)
        return cls(
            W1=rng.uniform(-a1, a1, size=(h, d)),
            b1=np.zeros(h),
            W2=rng.uniform(-a2, a2, size=h),
            b2=0.0,
            Wlogit=rng.uniform(-a1, a1, size=d),
            blogit=0.0,
            W3=float(rng.uniform(-1.0, 1.0)),
            b3=0.0,
        )

    @classmethod
    def zeros(cls, d: int, h: int) -> "HeadParams":
        return cls(np.zeros((h, d)), np.zeros(h), np.zeros(h), 0.0, np.zeros(d), 0.0, 0.0, 0.0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.W1.shape

    def names(self) -> list[str]:
        return [f.name for f in fields(self)]

    def copy(self) -> "HeadParams":
        return HeadParams(**{k: np.array(v, dtype=float) if np.ndim(v) else float(v) for k, v in vars(self).items()})

    def validate(self) -> None:
        h, d = self.W1.shape
        expected = {"b1": (h,), "W2": (h,), "Wlogit": (d,)}
        for name, shp in expected.items():
            if np.shape(getattr(self, name)) != shp:
                raise ValueError(f"{name} has shape {np.shape(getattr(self, name))}, expected {shp}")
        for name in ("b2", "blogit", "W3", "b3"):
            if np.ndim(getattr(self, name)) != 0:
                raise ValueError(f"{name} must be a scalar")
        for name, v in vars(self).items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} has non-finite entries")


@dataclass
class LogicHeadParams:
    c: HeadParams
    e: HeadParams
    seed: int | None = None

    @classmethod
    def init(cls, d: int, h: int = 32, seed: int = 0) -> "LogicHeadParams":
        rng = np.random.default_rng(seed)
        return cls(HeadParams.init(d, h, rng), HeadParams.init(d, h, rng), seed)

    @property
    def d(self) -> int:
        return self.c.W1.shape[1]

    @property
    def h(self) -> int:
        return self.c.W1.shape[0]

    def head(self, name: str) -> HeadParams:
        return getattr(self, name)

    def copy(self) -> "LogicHeadParams":
        return LogicHeadParams(self.c.copy(), self.e.copy(), self.seed)


@dataclass
class FactScores:
    logits: dict[str, np.ndarray]
    raw: dict[str, np.ndarray]
    norm: dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.raw["c"])


@dataclass
class ObservationLogits:
    L: dict[str, float]
    p: dict[str, float]


def attention_preactivation(R: np.ndarray, params: HeadParams) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(s, hidden)`` with ``raw = sigmoid(s)`` and ``hidden = tanh(W1 R + b1)``."""
    R = np.asarray(R, dtype=float)
    if R.shape[-1] != params.W1.shape[1]:
        raise ValueError(f"representation has dimension {R.shape[-1]}, head expects {params.W1.shape[1]}")
    hidden = np.tanh(R @ params.W1.T + params.b1)
    return hidden @ params.W2 + params.b2, hidden


def raw_attention(R: np.ndarray, params: HeadParams) -> np.ndarray:
    """Unnormalized attention for one representation or a stack of them."""
    return sigmoid(attention_preactivation(R, params)[0])


def normalize_attention(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    if raw.size == 0:
        raise ValueError("cannot normalize an empty attention vector")
    if np.any(raw <= 0):
        raise ValueError("attention values must be positive")
    return raw / raw.sum()


def _normalize_log(s: np.ndarray) -> np.ndarray:
    # same as raw / raw.sum() but stays finite when every sigmoid underflows
    log_raw = -np.logaddexp(0.0, -s)
    w = np.exp(log_raw - log_raw.max())
    return w / w.sum()


def forward(reps, params: LogicHeadParams) -> tuple[FactScores, ObservationLogits]:
    R = np.atleast_2d(np.asarray(reps, dtype=float))
    if R.shape[0] == 0 or np.asarray(reps).size == 0:
        raise ValueError("forward needs at least one fact")
    logits, raw, norm, L, p = {}, {}, {}, {}, {}
    for x in HEADS:
        hp = params.head(x)
        logits[x] = R @ hp.Wlogit + hp.blogit
        s, _ = attention_preactivation(R, hp)
        raw[x] = sigmoid(s)
        norm[x] = _normalize_log(s)
        L[x] = float(norm[x] @ logits[x])
        p[x] = sigmoid(hp.W3 * L[x] + hp.b3)
    return FactScores(logits, raw, norm), ObservationLogits(L, p)


def _head_to_json(hp: HeadParams) -> dict:
    return {k: (v.tolist() if np.ndim(v) else float(v)) for k, v in vars(hp).items()}


def _head_from_json(obj: dict) -> HeadParams:
    hp = HeadParams(
        W1=np.asarray(obj["W1"], dtype=float),
        b1=np.asarray(obj["b1"], dtype=float),
        W2=np.asarray(obj["W2"], dtype=float),
        b2=float(obj["b2"]),
        Wlogit=np.asarray(obj["Wlogit"], dtype=float),
        blogit=float(obj["blogit"]),
        W3=float(obj["W3"]),
        b3=float(obj["b3"]),
    )
    hp.validate()
    return hp


def checkpoint_dict(params: LogicHeadParams, encoder: dict | None = None) -> dict:
    out = {
        "format_version": FORMAT_VERSION,
        "d": params.d,
        "h": params.h,
        "seed": params.seed,
        "heads": {x: _head_to_json(params.head(x)) for x in HEADS},
    }
    if encoder is not None:
        out["encoder"] = encoder
    return out


def save_checkpoint(path: str | Path, params: LogicHeadParams, encoder: dict | None = None) -> None:
    # json writes floats with repr(), which round-trips doubles exactly
    text = json.dumps(checkpoint_dict(params, encoder), indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[LogicHeadParams, dict | None]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format_version {obj.get('format_version')!r}")
    params = LogicHeadParams(_head_from_json(obj["heads"]["c"]), _head_from_json(obj["heads"]["e"]), obj.get("seed"))
    if params.d != obj["d"] or params.h != obj["h"] or params.e.shape != params.c.shape:
        raise ValueError(f"{path}: array shapes do not match d={obj['d']}, h={obj['h']}")
    return params, obj.get("encoder")
