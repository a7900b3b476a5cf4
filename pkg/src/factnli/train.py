"""Losses, hand-derived gradients and the training loop.

Per supervised head ``x`` with target ``y``::

    obs_loss  = (sigmoid(W3 * L + b3) - y) ** 2
    fact_loss = (max_i raw_i - y) ** 2
    total     = lambda_obs * sum(obs_loss) + lambda_fact * sum(fact_loss)

The max is differentiated through the first index attaining it.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Observation
from .head import (
    HEADS,
    FactScores,
    HeadParams,
    LogicHeadParams,
    ObservationLogits,
    attention_preactivation,
    forward,
    sigmoid,
)
from .rules import SupervisionTargets, classify, derive_targets

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 1
    seed: int = 0
    lambda_obs: float = 1.0
    lambda_fact: float = 1.0
    optimizer: str = "adam"
    hidden_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle: bool = True
    exclusive_contradiction: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lambda_obs < 0 or self.lambda_fact < 0:
            raise ValueError("loss weights must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class LossBreakdown:
    obs_loss_c: float = 0.0
    fact_loss_c: float = 0.0
    obs_loss_e: float = 0.0
    fact_loss_e: float = 0.0
    lambda_obs: float = 1.0
    lambda_fact: float = 1.0

    @property
    def total(self) -> float:
        return self.lambda_obs * (self.obs_loss_c + self.obs_loss_e) + self.lambda_fact * (
            self.fact_loss_c + self.fact_loss_e
        )


def compute_loss(
    scores: FactScores, logits: ObservationLogits, targets: SupervisionTargets, config: TrainConfig
) -> LossBreakdown:
    out = LossBreakdown(lambda_obs=config.lambda_obs, lambda_fact=config.lambda_fact)
    for x, y in targets.supervised.items():
        setattr(out, f"obs_loss_{x}", (logits.p[x] - y) ** 2)
        setattr(out, f"fact_loss_{x}", (float(np.max(scores.raw[x])) - y) ** 2)
    return out


def _head_gradient(R: np.ndarray, hp: HeadParams, y: float, config: TrainConfig) -> HeadParams:
    s, t = attention_preactivation(R, hp)
    raw = sigmoid(s)
    log_raw = -np.logaddexp(0.0, -s)
    a = np.exp(log_raw - log_raw.max())
    a /= a.sum()
    logit = R @ hp.Wlogit + hp.blogit
    L = float(a @ logit)
    u = hp.W3 * L + hp.b3
    p = sigmoid(u)

    g_u = config.lambda_obs * 2.0 * (p - y) * p * (1.0 - p)
    g_L = g_u * hp.W3
    g_logit = g_L * a
    # d L / d s_k = (logit_k - L) * a_k * (1 - raw_k)
    g_s = g_L * (logit - L) * a * (1.0 - raw)
    j = int(np.argmax(raw))
    g_s[j] += config.lambda_fact * 2.0 * (raw[j] - y) * raw[j] * (1.0 - raw[j])
    g_z = np.outer(g_s, hp.W2) * (1.0 - t * t)
    return HeadParams(
        W1=g_z.T @ R,
        b1=g_z.sum(axis=0),
        W2=g_s @ t,
        b2=float(g_s.sum()),
        Wlogit=g_logit @ R,
        blogit=float(g_logit.sum()),
        W3=g_u * L,
        b3=g_u,
    )


def gradients(
    reps, params: LogicHeadParams, targets: SupervisionTargets, config: TrainConfig
) -> LogicHeadParams:
    """Analytic gradient of the total loss for one observation."""
    R = np.atleast_2d(np.asarray(reps, dtype=float))
    d, h = params.d, params.h
    out = LogicHeadParams(HeadParams.zeros(d, h), HeadParams.zeros(d, h), params.seed)
    for x, y in targets.supervised.items():
        setattr(out, x, _head_gradient(R, params.head(x), float(y), config))
    return out


def total_loss(reps, params: LogicHeadParams, targets: SupervisionTargets, config: TrainConfig) -> float:
    scores, logits = forward(reps, params)
    return compute_loss(scores, logits, targets, config).total


def _accumulate(acc: LogicHeadParams, g: LogicHeadParams) -> None:
    for x in HEADS:
        ah, gh = acc.head(x), g.head(x)
        for name in ah.names():
            setattr(ah, name, getattr(ah, name) + getattr(gh, name))


def _scale(g: LogicHeadParams, factor: float) -> None:
    for x in HEADS:
        gh = g.head(x)
        for name in gh.names():
            setattr(gh, name, getattr(gh, name) * factor)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: LogicHeadParams, grads: LogicHeadParams) -> None:
        for x in HEADS:
            ph, gh = params.head(x), grads.head(x)
            for name in ph.names():
                setattr(ph, name, getattr(ph, name) - self.lr * getattr(gh, name))


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[tuple[str, str], np.ndarray] = {}
        self.v: dict[tuple[str, str], np.ndarray] = {}

    def step(self, params: LogicHeadParams, grads: LogicHeadParams) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for x in HEADS:
            ph, gh = params.head(x), grads.head(x)
            for name in ph.names():
                g = np.asarray(getattr(gh, name), dtype=float)
                key = (x, name)
                m = self.m.get(key, np.zeros_like(g))
                v = self.v.get(key, np.zeros_like(g))
                m = self.beta1 * m + (1.0 - self.beta1) * g
                v = self.beta2 * v + (1.0 - self.beta2) * g * g
                self.m[key], self.v[key] = m, v
                update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
                new = getattr(ph, name) - update
                setattr(ph, name, float(new) if np.ndim(new) == 0 else new)


@dataclass
class EpochStats:
    epoch: int
    total_loss: float
    obs_loss_c: float
    fact_loss_c: float
    obs_loss_e: float
    fact_loss_e: float
    train_accuracy: float


@dataclass
class TrainResult:
    params: LogicHeadParams
    history: list[EpochStats] = field(default_factory=list)


def check_trainable(dataset: Sequence[Observation]) -> None:
    if not dataset:
        raise TrainingError("cannot train on an empty dataset")
    for obs in dataset:
        if obs.label is None:
            raise TrainingError(f"observation {obs.id!r} has no gold label")
        if not obs.facts:
            raise TrainingError(f"observation {obs.id!r} has no facts")
        if any(f.eval_only for f in obs.facts):
            raise TrainingError(f"observation {obs.id!r} carries evaluation-only facts")


def encode_dataset(dataset: Sequence[Observation], encoder) -> list[np.ndarray]:
    return [encoder.encode_facts(obs.id, [f.text for f in obs.facts], obs.hypothesis) for obs in dataset]


def accuracy(reps: Sequence[np.ndarray], labels, params: LogicHeadParams, threshold: float = 0.5) -> float:
    hits = sum(classify(forward(R, params)[0], threshold).predicted is y for R, y in zip(reps, labels))
    return hits / len(labels)


def train(dataset: Sequence[Observation], encoder, config: TrainConfig | None = None) -> TrainResult:
    config = config or TrainConfig()
    check_trainable(dataset)
    reps = encode_dataset(dataset, encoder)
    labels = [obs.label for obs in dataset]
    targets = [derive_targets(y, config.exclusive_contradiction) for y in labels]

    params = LogicHeadParams.init(encoder.dim, config.hidden_size, config.seed)
    if config.optimizer == "adam":
        opt = Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    else:
        opt = SGD(config.learning_rate)
    order_rng = np.random.default_rng([config.seed, 1])
    n = len(dataset)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(n) if config.shuffle else np.arange(n)
        sums = np.zeros(5)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            acc = None
            for i in batch:
                scores, logits = forward(reps[i], params)
                lb = compute_loss(scores, logits, targets[i], config)
                if not math.isfinite(lb.total):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch} on observation {dataset[i].id!r}: {asdict(lb)}"
                    )
                sums += (lb.total, lb.obs_loss_c, lb.fact_loss_c, lb.obs_loss_e, lb.fact_loss_e)
                g = gradients(reps[i], params, targets[i], config)
                if acc is None:
                    acc = g
                else:
                    _accumulate(acc, g)
            if len(batch) > 1:
                _scale(acc, 1.0 / len(batch))
            opt.step(params, acc)
        stats = EpochStats(epoch, *(sums / n).tolist(), train_accuracy=accuracy(reps, labels, params))
        logger.info("epoch %d loss %.5f acc %.4f", epoch, stats.total_loss, stats.train_accuracy)
        history.append(stats)
    return TrainResult(params, history)


def write_log(history: Sequence[EpochStats], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([fl.name for fl in fields(EpochStats)])
        for row in history:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in asdict(row).values()])
