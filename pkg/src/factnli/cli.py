"""Command-line entry point: ``factnli {generate-facts,train,eval,predict,explain}``.

Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .data import FACT_STRATEGIES, DatasetError, StrategyNotAllowed, dump_dataset, load_dataset, select_facts
from .encoder import EncoderError, HashingEncoder, encoder_from_config, load_precomputed
from .generator import GenerationCache, GenerationError, Generator, HttpService, MockService, PromptError
from .head import load_checkpoint, save_checkpoint
from .metrics import EvaluationError, fact_level_report, load_fact_annotations, predict, report_from_predictions
from .rules import explanation
from .train import TrainConfig, TrainingError, train, write_log

logger = logging.getLogger("factnli")

RUNTIME_ERRORS = (
    DatasetError,
    StrategyNotAllowed,
    EncoderError,
    GenerationError,
    PromptError,
    TrainingError,
    EvaluationError,
    ValueError,
    KeyError,
    OSError,
)


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="factnli", description="Fact-level logical reasoning for NLI.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="log progress to stderr")

    def data_flag(p, help="input dataset (JSONL)"):
        p.add_argument("--data", required=True, type=Path, help=help)

    def strategy_flag(p, default):
        p.add_argument(
            "--facts-strategy",
            choices=FACT_STRATEGIES,
            default=default,
            help=f"which generated facts feed the model (default: {default})",
        )

    def scoring_flags(p):
        p.add_argument("--checkpoint", required=True, type=Path, help="trained checkpoint (JSON)")
        p.add_argument("--threshold", type=float, default=0.5, help="fact decision threshold (default: 0.5)")
        p.add_argument("--embeddings", type=Path, help="precomputed embeddings for this dataset (JSONL)")

    g = sub.add_parser("generate-facts", parents=[common], help="generate fact lists and write an augmented dataset")
    data_flag(g, "dataset whose premises need facts (JSONL; facts may be empty)")
    strategy_flag(g, "factcomb")
    g.add_argument("--out", required=True, type=Path, help="augmented dataset to write (JSONL)")
    g.add_argument("--split", choices=("train", "eval"), default="eval", help="hypcond is refused for train")
    g.add_argument("--service", choices=("mock", "http"), default="mock", help="generation backend (default: mock)")
    g.add_argument("--cache", type=Path, help="append-only generation cache (JSONL)")
    g.add_argument("--model", default="", help="model identifier sent to the http service")
    g.add_argument("--max-tokens", type=int, default=256, help="completion length limit")
    g.add_argument("--workers", type=int, default=4, help="concurrent service calls")

    t = sub.add_parser("train", parents=[common], help="train the logic head")
    data_flag(t, "labeled training dataset (JSONL)")
    strategy_flag(t, "factcomb")
    t.add_argument("--out", required=True, type=Path, help="checkpoint to write (JSON)")
    t.add_argument("--config", type=Path, help="training config (JSON object of TrainConfig fields)")
    t.add_argument("--seed", type=int, help="overrides the config seed")
    t.add_argument("--epochs", type=int, help="overrides the config epoch count")
    t.add_argument("--encoder-dim", type=int, default=64, help="hashing encoder width d (default: 64)")
    t.add_argument("--embeddings", type=Path, help="use precomputed embeddings instead of the hashing encoder")
    t.add_argument("--log", type=Path, help="per-epoch CSV log (default: <out>.log.csv)")

    for name, help in (
        ("eval", "compute accuracy and P/R/F1"),
        ("predict", "write per-observation predictions (JSONL)"),
        ("explain", "report the facts responsible for each prediction"),
    ):
        p = sub.add_parser(name, parents=[common], help=help)
        data_flag(p)
        strategy_flag(p, "hypcond")
        scoring_flags(p)
        p.add_argument("--out", type=Path, help="output file (default: stdout)")
        if name == "eval":
            p.add_argument("--fact-labels", type=Path, help="per-fact gold labels (JSONL) for fact-level scores")
            p.add_argument("--format", choices=("json", "table"), default="json")
        if name == "explain":
            p.add_argument("--format", choices=("json", "text"), default="json")
    return parser


def _write(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8")


def _check_inputs(args) -> None:
    for attr in ("data", "checkpoint", "config", "embeddings", "fact_labels"):
        path = getattr(args, attr, None)
        if path is not None and not path.is_file():
            raise UsageError(f"--{attr.replace('_', '-')}: no such file: {path}")
    out = getattr(args, "out", None)
    inputs = {getattr(args, a, None) for a in ("data", "checkpoint", "config", "embeddings", "fact_labels")}
    if out is not None and out in inputs:
        raise UsageError("--out must not overwrite an input file")
    if not 0.0 <= getattr(args, "threshold", 0.5) <= 1.0:
        raise UsageError("--threshold must lie in [0, 1]")


def _load_for_scoring(args):
    dataset = [select_facts(o, args.facts_strategy, "eval") for o in load_dataset(args.data, "eval")]
    params, enc_cfg = load_checkpoint(args.checkpoint)
    if args.embeddings is not None:
        encoder = load_precomputed(args.embeddings, params.d)
    else:
        encoder = encoder_from_config(enc_cfg or {"kind": "hashing", "d": params.d - 1})
    if encoder.dim != params.d:
        raise EncoderError(f"encoder produces dimension {encoder.dim}, checkpoint expects {params.d}")
    return dataset, params, encoder


def cmd_generate(args) -> None:
    dataset = load_dataset(args.data, args.split, require_facts=False)
    service = MockService() if args.service == "mock" else HttpService(model=args.model)
    gen = Generator(service, GenerationCache(args.cache), max_tokens=args.max_tokens)
    augmented = gen.generate_dataset(dataset, args.facts_strategy, args.split, max_workers=args.workers)
    dump_dataset(augmented, args.out)
    logger.info("wrote %d observations to %s", len(augmented), args.out)


def cmd_train(args) -> None:
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.epochs is not None:
        config = replace(config, epochs=args.epochs)
    dataset = [select_facts(o, args.facts_strategy, "train") for o in load_dataset(args.data, "train")]
    encoder = load_precomputed(args.embeddings) if args.embeddings else HashingEncoder(args.encoder_dim)
    result = train(dataset, encoder, config)
    save_checkpoint(args.out, result.params, encoder.config())
    write_log(result.history, args.log or args.out.with_name(args.out.name + ".log.csv"))
    last = result.history[-1]
    logger.info("trained %d epochs: loss %.5f, train accuracy %.4f", last.epoch, last.total_loss, last.train_accuracy)


def cmd_eval(args) -> None:
    dataset, params, encoder = _load_for_scoring(args)
    preds = predict(dataset, params, encoder, args.threshold)
    report = report_from_predictions(dataset, preds, args.threshold)
    if args.fact_labels is not None:
        report.facts = fact_level_report(dataset, preds, load_fact_annotations(args.fact_labels), args.threshold)
    _write((report.to_json() if args.format == "json" else report.table()) + "\n", args.out)


def _prediction_record(obs, pred) -> dict:
    rec = {
        "id": obs.id,
        "predicted": pred.predicted.value,
        "contradiction_facts": list(pred.contradiction_facts),
        "entailment_facts": list(pred.entailment_facts),
        "raw_c": [float(v) for v in pred.scores.raw["c"]],
        "raw_e": [float(v) for v in pred.scores.raw["e"]],
    }
    if obs.label is not None:
        rec["gold"] = obs.label.value
    return rec


def cmd_predict(args) -> None:
    dataset, params, encoder = _load_for_scoring(args)
    preds = predict(dataset, params, encoder, args.threshold)
    _write("".join(json.dumps(_prediction_record(o, p)) + "\n" for o, p in zip(dataset, preds)), args.out)


def render_explanation(report: dict, obs) -> str:
    lines = [f"[{report['id']}] predicted: {report['predicted']}" + (f" (gold: {report['gold']})" if "gold" in report else "")]
    lines.append(f"  hypothesis: {obs.hypothesis}")
    head = "contradiction" if report["predicted"] == "contradiction" else "entailment"
    if report["responsible_facts"]:
        lines.append(f"  responsible facts ({head} score > threshold):")
        for row in report["responsible_facts"]:
            lines.append(f"    #{row['index']} {row['score']:.3f}  {row['text']}")
    else:
        lines.append("  no fact exceeds the threshold for either head")
    return "\n".join(lines)


def cmd_explain(args) -> None:
    dataset, params, encoder = _load_for_scoring(args)
    preds = predict(dataset, params, encoder, args.threshold)
    chunks = []
    for obs, pred in zip(dataset, preds):
        rep = explanation(pred, [f.text for f in obs.facts], obs.id, obs.label)
        chunks.append(json.dumps(rep, ensure_ascii=False) if args.format == "json" else render_explanation(rep, obs))
    sep = "\n" if args.format == "json" else "\n\n"
    _write(sep.join(chunks) + "\n", args.out)


COMMANDS = {
    "generate-facts": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "explain": cmd_explain,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _check_inputs(args)
    except UsageError as e:
        print(f"factnli {args.command}: error: {e}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](args)
    except RUNTIME_ERRORS as e:
        print(f"factnli {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
