"""Fact-level logical reasoning for natural language inference."""

from .data import Fact, FactBundle, NliLabel, Observation, Provenance, combine_bundles, load_dataset, select_facts
from .encoder import HashingEncoder, load_precomputed
from .head import LogicHeadParams, forward, load_checkpoint, save_checkpoint
from .metrics import evaluate, evaluate_facts
from .rules import Prediction, classify, derive_targets
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Fact", "FactBundle", "NliLabel", "Observation", "Provenance", "combine_bundles", "load_dataset",
    "select_facts", "HashingEncoder", "load_precomputed", "LogicHeadParams", "forward", "load_checkpoint",
    "save_checkpoint", "evaluate", "evaluate_facts", "Prediction", "classify", "derive_targets",
    "TrainConfig", "train",
]
