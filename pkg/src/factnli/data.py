"""Domain records and the JSONL dataset format.

Each line of a dataset file is one observation::

    {"id": "a1", "premise": "...", "hypothesis": "...",
     "label": "entailment", "round": "R1",
     "facts": [{"text": "...", "provenance": "list1"}, ...]}

``label`` and ``round`` are optional. Provenance is one of ``list1``,
``list2``, ``ext`` or ``hypcond``. Unknown keys are ignored with a warning.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)


class DatasetError(ValueError):
    """A dataset file or record failed validation."""


class UnknownLabel(DatasetError):
    pass


class StrategyNotAllowed(ValueError):
    """The requested fact strategy cannot be used for this split."""


class NliLabel(enum.Enum):
    ENTAILMENT = "entailment"
    NEUTRAL = "neutral"
    CONTRADICTION = "contradiction"

    @classmethod
    def parse(cls, value: str) -> "NliLabel":
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise UnknownLabel(f"unknown label {value!r}") from None


class Provenance(enum.Enum):
    LIST1 = "list1"
    LIST2 = "list2"
    EXTENSION = "ext"
    HYPCOND = "hypcond"

    @property
    def rank(self) -> int:
        return _PROVENANCE_ORDER.index(self)


_PROVENANCE_ORDER = [Provenance.LIST1, Provenance.LIST2, Provenance.EXTENSION, Provenance.HYPCOND]


@dataclass(frozen=True)
class Fact:
    text: str
    provenance: Provenance = Provenance.LIST1
    eval_only: bool = False

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise DatasetError("fact text is empty")
        if self.provenance is Provenance.HYPCOND and not self.eval_only:
            # hypothesis-conditioned facts never reach training
            object.__setattr__(self, "eval_only", True)


@dataclass(frozen=True)
class FactBundle:
    facts: tuple[Fact, ...] = ()
    dedup_applied: bool = False

    def __len__(self) -> int:
        return len(self.facts)

    def __iter__(self):
        return iter(self.facts)

    @property
    def texts(self) -> list[str]:
        return [f.text for f in self.facts]

    def of(self, *provenance: Provenance) -> "FactBundle":
        return FactBundle(tuple(f for f in self.facts if f.provenance in provenance), self.dedup_applied)

    def trainable(self) -> "FactBundle":
        return FactBundle(tuple(f for f in self.facts if not f.eval_only), self.dedup_applied)


@dataclass(frozen=True)
class Observation:
    id: str
    premise: str
    hypothesis: str
    label: NliLabel | None = None
    bundle: FactBundle = field(default_factory=FactBundle)
    round: str | None = None

    @property
    def facts(self) -> tuple[Fact, ...]:
        return self.bundle.facts


def normalize_fact_text(text: str) -> str:
    """Key used for deduplication: case-folded, whitespace collapsed, no trailing period."""
    key = " ".join(text.casefold().split())
    return key.rstrip(".").rstrip()


class Strategy(enum.Enum):
    FACT_COMB = "factcomb"
    FACT_EXT = "factext"
    HYPCOND_ATTACH = "hypcond_attach"


def _dedup_sorted(facts: Iterable[Fact]) -> tuple[Fact, ...]:
    ordered = sorted(facts, key=lambda f: f.provenance.rank)  # stable
    seen: set[str] = set()
    out = []
    for f in ordered:
        key = normalize_fact_text(f.text)
        if key in seen:
            continue
        seen.add(key)
        out.append(f)
    return tuple(out)


def combine_bundles(primary: FactBundle, extra: Sequence[FactBundle], strategy: Strategy) -> FactBundle:
    """Merge fact bundles.

    ``FACT_COMB`` takes the union of every fact, ``FACT_EXT`` adds only
    extension facts and ``HYPCOND_ATTACH`` adds hypothesis-conditioned facts,
    which are always marked ``eval_only``. Duplicates (by
    :func:`normalize_fact_text`) are dropped, keeping the first occurrence in
    provenance order.
    """
    merged = list(primary.facts)
    for bundle in extra:
        for f in bundle.facts:
            if strategy is Strategy.FACT_EXT and f.provenance is not Provenance.EXTENSION:
                continue
            if strategy is Strategy.HYPCOND_ATTACH:
                if f.provenance is not Provenance.HYPCOND:
                    continue
                f = replace(f, eval_only=True)
            merged.append(f)
    return FactBundle(_dedup_sorted(merged), dedup_applied=True)


FACT_STRATEGIES = ("list1", "list2", "factcomb", "factext", "hypcond")


def select_facts(observation: Observation, strategy: str, split: str = "eval") -> Observation:
    """Return a copy of ``observation`` whose bundle follows a named fact strategy.

    ``hypcond`` means FactComb plus the hypothesis-conditioned facts and is
    only valid for evaluation. ``factext`` extends list 1 (or list 2 when
    list 1 is absent) with the extension facts.
    """
    b = observation.bundle
    l1, l2 = b.of(Provenance.LIST1), b.of(Provenance.LIST2)
    ext, hyp = b.of(Provenance.EXTENSION), b.of(Provenance.HYPCOND)
    if strategy == "list1":
        out = combine_bundles(l1, [], Strategy.FACT_COMB)
    elif strategy == "list2":
        out = combine_bundles(l2, [], Strategy.FACT_COMB)
    elif strategy == "factcomb":
        out = combine_bundles(l1, [l2], Strategy.FACT_COMB)
    elif strategy == "factext":
        base = l1 if len(l1) else l2
        out = combine_bundles(base, [ext], Strategy.FACT_EXT)
    elif strategy == "hypcond":
        if split == "train":
            raise StrategyNotAllowed("hypothesis-conditioned facts are evaluation-only")
        out = combine_bundles(combine_bundles(l1, [l2], Strategy.FACT_COMB), [hyp], Strategy.HYPCOND_ATTACH)
    else:
        raise ValueError(f"unknown fact strategy {strategy!r}; expected one of {FACT_STRATEGIES}")
    if split == "train":
        out = out.trainable()
    if not len(out):
        raise DatasetError(f"{observation.id}: no facts left under strategy {strategy!r}")
    return replace(observation, bundle=out)


_KNOWN_KEYS = {"id", "premise", "hypothesis", "label", "round", "facts"}
_KNOWN_FACT_KEYS = {"text", "provenance"}


def parse_record(obj: dict, split: str = "eval", require_facts: bool = True) -> Observation:
    if not isinstance(obj, dict):
        raise DatasetError("expected a JSON object")
    unknown = set(obj) - _KNOWN_KEYS
    if unknown:
        logger.warning("ignoring unknown keys %s", sorted(unknown))
    for key in ("id", "premise", "hypothesis", "facts"):
        if key not in obj:
            raise DatasetError(f"missing required field {key!r}")
    label = obj.get("label")
    label = NliLabel.parse(label) if label is not None else None
    raw_facts = obj["facts"]
    if not isinstance(raw_facts, list):
        raise DatasetError("'facts' must be a list")
    facts = []
    for rf in raw_facts:
        if isinstance(rf, str):
            rf = {"text": rf}
        if not isinstance(rf, dict):
            raise DatasetError("each fact must be an object")
        extra = set(rf) - _KNOWN_FACT_KEYS
        if extra:
            logger.warning("ignoring unknown fact keys %s", sorted(extra))
        try:
            prov = Provenance(rf.get("provenance", "list1"))
        except ValueError:
            raise DatasetError(f"unknown provenance {rf.get('provenance')!r}") from None
        if split == "train" and prov is Provenance.HYPCOND:
            continue
        facts.append(Fact(str(rf.get("text", "")), prov, prov is Provenance.HYPCOND))
    if not facts and require_facts:
        raise DatasetError("empty fact list")
    rnd = obj.get("round")
    return Observation(
        id=str(obj["id"]),
        premise=str(obj["premise"]),
        hypothesis=str(obj["hypothesis"]),
        label=label,
        bundle=FactBundle(tuple(facts)),
        round=None if rnd is None else str(rnd),
    )


def load_dataset(path: str | Path, split: str = "eval", require_facts: bool = True) -> list[Observation]:
    """Read and validate a JSONL dataset; ``split="train"`` drops HypCond facts.

    ``require_facts=False`` admits records without facts, which is only
    useful as input to fact generation.
    """
    if split not in ("train", "eval"):
        raise ValueError(f"split must be 'train' or 'eval', got {split!r}")
    p = Path(path)
    observations: list[Observation] = []
    seen: dict[str, int] = {}
    with p.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obs = parse_record(json.loads(line), split, require_facts)
            except json.JSONDecodeError as e:
                raise DatasetError(f"{p}:{lineno}: malformed JSON: {e.msg}") from e
            except UnknownLabel as e:
                raise UnknownLabel(f"{p}:{lineno}: {e}") from None
            except DatasetError as e:
                raise DatasetError(f"{p}:{lineno}: {e}") from None
            if obs.id in seen:
                raise DatasetError(f"{p}:{lineno}: duplicate id {obs.id!r} (first seen on line {seen[obs.id]})")
            seen[obs.id] = lineno
            observations.append(obs)
    return observations


def observation_to_record(obs: Observation) -> dict:
    rec: dict = {"id": obs.id, "premise": obs.premise, "hypothesis": obs.hypothesis}
    if obs.label is not None:
        rec["label"] = obs.label.value
    if obs.round is not None:
        rec["round"] = obs.round
    rec["facts"] = [{"text": f.text, "provenance": f.provenance.value} for f in obs.facts]
    return rec


def dump_dataset(observations: Iterable[Observation], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for obs in observations:
            f.write(json.dumps(observation_to_record(obs), ensure_ascii=False) + "\n")
