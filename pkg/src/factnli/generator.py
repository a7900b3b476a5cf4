"""Prompt construction, fact-list parsing and cached calls to a text-generation service.

Template files live in ``factnli/templates`` and can be replaced with
``load_template(path, kind)``. A file holds exactly four few-shot blocks
separated by a line containing only ``===``; ``#`` lines are comments.
Within a block:

* ``Premise: <text>`` (all kinds)
* ``Hypothesis: <text>`` and ``Fact: <text>`` (hypcond)
* ``Facts:`` followed by ``- item`` lines (list, extend)
* ``Missing:`` followed by ``- item`` lines (extend)

The HTTP service posts ``{"model", "prompt", "max_tokens", "temperature"}``
as JSON to ``$FACTNLI_SERVICE_URL`` with ``Authorization: Bearer
$FACTNLI_API_KEY`` and accepts either ``{"text": ...}`` or
``{"choices": [{"text": ...}]}`` in reply.

The cache is an append-only JSONL file, one :class:`GenerationRecord` per
line, keyed by a SHA-256 of (observation id, template name, template hash).
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import threading
import time
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .data import (
    Fact,
    FactBundle,
    Observation,
    Provenance,
    Strategy,
    StrategyNotAllowed,
    combine_bundles,
)

logger = logging.getLogger(__name__)

LIST_INSTRUCTION = "List all the facts we explicitly know from the premise:"
EXTEND_INSTRUCTION = "List all the facts missing above:"
HYPCOND_INSTRUCTION = (
    "List a fact we explicitly know from the premise that we can use to verify if the hypothesis is true:"
)
N_EXAMPLES = 4


class TemplateKind(enum.Enum):
    LIST = "list"
    EXTEND = "extend"
    HYPCOND = "hypcond"


INSTRUCTIONS = {
    TemplateKind.LIST: LIST_INSTRUCTION,
    TemplateKind.EXTEND: EXTEND_INSTRUCTION,
    TemplateKind.HYPCOND: HYPCOND_INSTRUCTION,
}


class GenerationError(RuntimeError):
    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class Example:
    premise: str
    facts: tuple[str, ...] = ()
    missing: tuple[str, ...] = ()
    hypothesis: str | None = None
    fact: str | None = None


@dataclass(frozen=True)
class PromptTemplate:
    kind: TemplateKind
    examples: tuple[Example, ...]
    name: str = ""

    def __post_init__(self):
        if len(self.examples) != N_EXAMPLES:
            raise PromptError(f"template {self.name!r} has {len(self.examples)} examples, expected {N_EXAMPLES}")
        for ex in self.examples:
            if self.kind is TemplateKind.HYPCOND and not (ex.hypothesis and ex.fact):
                raise PromptError(f"template {self.name!r}: hypcond examples need Hypothesis and Fact")
            if self.kind is TemplateKind.EXTEND and not (ex.facts and ex.missing):
                raise PromptError(f"template {self.name!r}: extend examples need Facts and Missing")
            if self.kind is TemplateKind.LIST and not ex.facts:
                raise PromptError(f"template {self.name!r}: list examples need Facts")

    @property
    def instruction(self) -> str:
        return INSTRUCTIONS[self.kind]

    @property
    def digest(self) -> str:
        return hashlib.sha256((self.kind.value + "\n" + few_shot_text(self)).encode("utf-8")).hexdigest()


def _numbered(items: Sequence[str], start: int = 1) -> list[str]:
    return [f"{i}. {text}" for i, text in enumerate(items, start=start)]


def _render_example(kind: TemplateKind, ex: Example) -> str:
    lines = [f"Premise: {ex.premise}"]
    if kind is TemplateKind.HYPCOND:
        lines += [f"Hypothesis: {ex.hypothesis}", HYPCOND_INSTRUCTION, ex.fact]
    elif kind is TemplateKind.EXTEND:
        lines += [LIST_INSTRUCTION, *_numbered(ex.facts), EXTEND_INSTRUCTION]
        lines += _numbered(ex.missing, start=len(ex.facts) + 1)
    else:
        lines += [LIST_INSTRUCTION, *_numbered(ex.facts)]
    return "\n".join(lines)


def few_shot_text(template: PromptTemplate) -> str:
    return "\n\n".join(_render_example(template.kind, ex) for ex in template.examples)


def build_prompt(
    template: PromptTemplate,
    premise: str,
    hypothesis: str | None = None,
    existing_facts: Sequence[str] | None = None,
) -> str:
    kind = template.kind
    if kind is TemplateKind.HYPCOND and not hypothesis:
        raise PromptError("a hypothesis is required for hypothesis-conditioned prompts")
    if kind is not TemplateKind.HYPCOND and hypothesis is not None:
        raise PromptError("a hypothesis is only accepted for hypothesis-conditioned prompts")
    if kind is TemplateKind.EXTEND and not existing_facts:
        raise PromptError("existing facts are required for extension prompts")
    if kind is not TemplateKind.EXTEND and existing_facts:
        raise PromptError("existing facts are only accepted for extension prompts")

    target = [f"Premise: {premise}"]
    if kind is TemplateKind.HYPCOND:
        target += [f"Hypothesis: {hypothesis}", HYPCOND_INSTRUCTION]
    elif kind is TemplateKind.EXTEND:
        target += [LIST_INSTRUCTION, *_numbered(existing_facts), EXTEND_INSTRUCTION]
    else:
        target += [LIST_INSTRUCTION]
    return few_shot_text(template) + "\n\n" + "\n".join(target) + "\n"


def parse_template(text: str, kind: TemplateKind, name: str = "") -> PromptTemplate:
    lines = [ln.rstrip("\n") for ln in text.splitlines() if not ln.lstrip().startswith("#")]
    blocks, cur = [], []
    for ln in lines:
        if ln.strip() == "===":
            blocks.append(cur)
            cur = []
        else:
            cur.append(ln)
    blocks.append(cur)

    examples = []
    for block in blocks:
        fields: dict[str, object] = {"facts": [], "missing": []}
        section = None
        for ln in block:
            s = ln.strip()
            if not s:
                continue
            if s.startswith("- ") and section in ("facts", "missing"):
                fields[section].append(s[2:].strip())
                continue
            key, sep, value = s.partition(":")
            if not sep:
                raise PromptError(f"template {name!r}: cannot parse line {s!r}")
            key = key.strip().lower()
            if key in ("facts", "missing"):
                section = key
            elif key in ("premise", "hypothesis", "fact"):
                fields[key] = value.strip()
                section = None
            else:
                raise PromptError(f"template {name!r}: unknown field {key!r}")
        if "premise" not in fields:
            if not fields["facts"] and not fields["missing"]:
                continue
            raise PromptError(f"template {name!r}: block without a Premise")
        examples.append(
            Example(
                premise=fields["premise"],
                facts=tuple(fields["facts"]),
                missing=tuple(fields["missing"]),
                hypothesis=fields.get("hypothesis"),
                fact=fields.get("fact"),
            )
        )
    return PromptTemplate(kind, tuple(examples), name)


def load_template(path: str | Path, kind: TemplateKind) -> PromptTemplate:
    p = Path(path)
    return parse_template(p.read_text(encoding="utf-8"), kind, p.stem)


_BUILTIN = {
    "list1": TemplateKind.LIST,
    "list2": TemplateKind.LIST,
    "extend1": TemplateKind.EXTEND,
    "extend2": TemplateKind.EXTEND,
    "hypcond": TemplateKind.HYPCOND,
}


def builtin_templates() -> dict[str, PromptTemplate]:
    root = resources.files("factnli") / "templates"
    return {
        name: parse_template((root / f"{name}.txt").read_text(encoding="utf-8"), kind, name)
        for name, kind in _BUILTIN.items()
    }


_MARKER_RE = re.compile(r"^\s*(?:\(?\d+[.)]|[-•*])\s*")


def parse_fact_list(response: str, single: bool = False) -> list[str]:
    """Split a generated list into facts, dropping numbering and bullets.

    With ``single=True`` only the first non-empty line is kept. An empty
    result means the response could not be parsed.
    """
    facts = []
    for line in response.splitlines():
        text = _MARKER_RE.sub("", line, count=1).strip()
        if text:
            facts.append(text)
            if single:
                break
    return facts


class CompletionService(Protocol):
    model: str

    def complete(self, prompt: str, max_tokens: int = 256, temperature: float = 0.0) -> str: ...


class HttpService:
    def __init__(self, url: str | None = None, api_key: str | None = None, model: str = "", timeout: float = 60.0):
        self.url = url or os.environ.get("FACTNLI_SERVICE_URL")
        if not self.url:
            raise GenerationError("no service URL configured (set FACTNLI_SERVICE_URL)")
        self.api_key = api_key if api_key is not None else os.environ.get("FACTNLI_API_KEY", "")
        self.model = model
        self.timeout = timeout

    def complete(self, prompt: str, max_tokens: int = 256, temperature: float = 0.0) -> str:
        body = json.dumps(
            {"model": self.model, "prompt": prompt, "max_tokens": max_tokens, "temperature": temperature}
        ).encode("utf-8")
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
        if self.api_key:
            req.add_header("Authorization", f"Bearer {self.api_key}")
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
        if "text" in payload:
            return payload["text"]
        try:
            return payload["choices"][0]["text"]
        except (KeyError, IndexError, TypeError):
            raise GenerationError("unexpected response shape", raw=json.dumps(payload)) from None


_SENT_RE = re.compile(r"(?<=[.!?])\s+")


def _target_block(prompt: str) -> dict[str, object]:
    block = prompt.rsplit("\n\n", 1)[-1]
    out: dict[str, object] = {"facts": []}
    for ln in block.splitlines():
        if ln.startswith("Premise: "):
            out["premise"] = ln[len("Premise: ") :]
        elif ln.startswith("Hypothesis: "):
            out["hypothesis"] = ln[len("Hypothesis: ") :]
        elif _MARKER_RE.match(ln):
            out["facts"].append(_MARKER_RE.sub("", ln, count=1))
    return out


class MockService:
    """Offline stand-in for a generation service.

    ``responses`` maps a prompt (or any callable's output) to the text to
    return. Without a match, answers are derived from the target premise:
    list prompts return its comma-separated clauses, extension prompts return
    clauses not already listed and
    hypothesis-conditioned prompts return the sentence with the largest word
    overlap with the hypothesis.
    """

    model = "mock"

    def __init__(self, responses: dict[str, str] | Callable[[str], str] | None = None):
        self.responses = responses
        self.calls: list[str] = []
        self._lock = threading.Lock()

    def complete(self, prompt: str, max_tokens: int = 256, temperature: float = 0.0) -> str:
        with self._lock:
            self.calls.append(prompt)
        if callable(self.responses):
            return self.responses(prompt)
        if self.responses is not None and prompt in self.responses:
            return self.responses[prompt]
        return self._derive(prompt)

    @staticmethod
    def _derive(prompt: str) -> str:
        target = _target_block(prompt)
        premise = str(target.get("premise", "")).strip()
        sentences = [s.strip() for s in _SENT_RE.split(premise) if s.strip()]
        last = prompt.rstrip("\n").rsplit("\n", 1)[-1]
        if last == HYPCOND_INSTRUCTION:
            hyp = set(str(target.get("hypothesis", "")).lower().split())
            return max(sentences, key=lambda s: len(hyp & set(s.lower().split())), default="")
        clauses = [c.strip().rstrip(".") + "." for s in sentences for c in s.split(",") if c.strip().rstrip(".")]
        if last == EXTEND_INSTRUCTION:
            have = {f.strip().lower().rstrip(".") for f in target["facts"]}
            missing = [c for c in clauses if c.lower().rstrip(".") not in have]
            return "\n".join(_numbered(missing, start=len(target["facts"]) + 1))
        return "\n".join(_numbered(clauses))


@dataclass
class GenerationRecord:
    key: str
    id: str
    template: str
    kind: str
    template_hash: str
    raw: str
    facts: list[str]
    parse_failed: bool
    model: str
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())


def cache_key(obs_id: str, template_name: str, template_hash: str) -> str:
    return hashlib.sha256(f"{obs_id}\x1f{template_name}\x1f{template_hash}".encode("utf-8")).hexdigest()


class GenerationCache:
    """Append-only JSONL cache; the last record for a key wins."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._records: dict[str, GenerationRecord] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open("r", encoding="utf-8") as f:
                for line in f:
                    if line.strip():
                        rec = GenerationRecord(**json.loads(line))
                        self._records[rec.key] = rec

    def __len__(self) -> int:
        return len(self._records)

    def get(self, key: str) -> GenerationRecord | None:
        with self._lock:
            return self._records.get(key)

    def put(self, record: GenerationRecord) -> None:
        with self._lock:
            self._records[record.key] = record
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as f:
                    f.write(json.dumps(asdict(record), ensure_ascii=False) + "\n")


@dataclass
class Generator:
    service: CompletionService
    cache: GenerationCache = field(default_factory=GenerationCache)
    templates: dict[str, PromptTemplate] = field(default_factory=builtin_templates)
    max_tokens: int = 256
    temperature: float = 0.0
    attempts: int = 3
    backoff: float = 1.0
    sleep: Callable[[float], None] = time.sleep

    def _complete(self, prompt: str) -> str:
        for attempt in range(self.attempts):
            try:
                return self.service.complete(prompt, self.max_tokens, self.temperature)
            except Exception as e:
                if attempt == self.attempts - 1:
                    raise GenerationError(f"service failed after {self.attempts} attempts: {e}") from e
                delay = self.backoff * 2**attempt
                logger.warning("service call failed (%s); retrying in %.1fs", e, delay)
                self.sleep(delay)
        raise AssertionError("unreachable")

    def run(self, obs: Observation, template_name: str, existing: Sequence[str] | None = None) -> list[str]:
        template = self.templates[template_name]
        key = cache_key(obs.id, template_name, template.digest)
        rec = self.cache.get(key)
        if rec is None:
            hyp = obs.hypothesis if template.kind is TemplateKind.HYPCOND else None
            prompt = build_prompt(template, obs.premise, hyp, existing)
            raw = self._complete(prompt)
            facts = parse_fact_list(raw, single=template.kind is TemplateKind.HYPCOND)
            rec = GenerationRecord(
                key=key,
                id=obs.id,
                template=template_name,
                kind=template.kind.value,
                template_hash=template.digest,
                raw=raw,
                facts=facts,
                parse_failed=not facts,
                model=getattr(self.service, "model", ""),
            )
            self.cache.put(rec)
        if rec.parse_failed:
            raise GenerationError(f"{obs.id}: no facts parsed from {template_name} response", raw=rec.raw)
        return list(rec.facts)

    def generate_bundle(self, obs: Observation, strategy: str, split: str = "eval") -> FactBundle:
        """Generate facts for one observation under a fact strategy.

        ``list1``/``list2`` produce one list, ``factcomb`` merges both,
        ``factext`` extends list 1 and ``hypcond`` adds one
        hypothesis-conditioned fact to ``factcomb`` (evaluation splits only).
        """
        if strategy == "hypcond" and split == "train":
            raise StrategyNotAllowed("hypothesis-conditioned facts are only generated for evaluation data")

        def bundle(name: str, prov: Provenance, existing=None) -> FactBundle:
            return FactBundle(tuple(Fact(t, prov) for t in self.run(obs, name, existing)))

        if strategy in ("list1", "list2"):
            prov = Provenance.LIST1 if strategy == "list1" else Provenance.LIST2
            return combine_bundles(bundle(strategy, prov), [], Strategy.FACT_COMB)
        if strategy == "factext":
            primary = bundle("list1", Provenance.LIST1)
            ext = bundle("extend1", Provenance.EXTENSION, primary.texts)
            return combine_bundles(primary, [ext], Strategy.FACT_EXT)
        if strategy in ("factcomb", "hypcond"):
            out = combine_bundles(bundle("list1", Provenance.LIST1), [bundle("list2", Provenance.LIST2)], Strategy.FACT_COMB)
            if strategy == "hypcond":
                out = combine_bundles(out, [bundle("hypcond", Provenance.HYPCOND)], Strategy.HYPCOND_ATTACH)
            return out
        raise ValueError(f"unknown fact strategy {strategy!r}")

    def generate_dataset(
        self, observations: Sequence[Observation], strategy: str, split: str = "eval", max_workers: int = 4
    ) -> list[Observation]:
        if strategy == "hypcond" and split == "train":
            raise StrategyNotAllowed("hypothesis-conditioned facts are only generated for evaluation data")
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            bundles = list(pool.map(lambda o: self.generate_bundle(o, strategy, split), observations))
        return [replace(o, bundle=b) for o, b in zip(observations, bundles)]


def generate_bundle(
    observation: Observation,
    service: CompletionService,
    strategy: str,
    split: str = "eval",
    cache: GenerationCache | None = None,
    **kwargs,
) -> FactBundle:
    gen = Generator(service, cache if cache is not None else GenerationCache(), **kwargs)
    return gen.generate_bundle(observation, strategy, split)
