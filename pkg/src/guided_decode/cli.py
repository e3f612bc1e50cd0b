"""Batch command-line entry points.

Subcommands: build-kb, build-dataset, generate, evaluate, report. Flags
are long-form only; a JSON config file may supply any flag (same key
names, hyphens or underscores), with the command line taking precedence.
All randomness derives from --seed. Exit codes: 0 success, 2 bad flags,
3 input/output or data errors, 4 model errors.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys

from . import benchmark, decoder, guidance, metrics
from .errors import (
    BridgeError,
    ContextTooLongError,
    GuidanceUnavailableError,
    GuidedDecodeError,
    MissingYesNoError,
    ModelConfigError,
    NonFiniteLogitsError,
    UnknownTokenError,
    VocabularyError,
)
from .knowledge import HierarchyKB, PropertyKB
from .models import BridgeModel, NGramModel, TableModel, Vocabulary

BRIDGE_URL_ENV = "GUIDED_DECODE_BRIDGE_URL"

EXIT_BAD_FLAGS = 2
EXIT_IO = 3
EXIT_MODEL = 4

_MODEL_ERRORS = (
    ModelConfigError,
    VocabularyError,
    UnknownTokenError,
    ContextTooLongError,
    BridgeError,
    MissingYesNoError,
    NonFiniteLogitsError,
    GuidanceUnavailableError,
)


def _load_model(spec: str, vocab_path: str | None, ngram_order: int, ngram_smoothing: float):
    """Model spec: ``table:<config>``, ``ngram:<corpus>``, or ``bridge:<url>``
    (a bare http(s) URL also selects the bridge)."""
    if spec.startswith(("http://", "https://")):
        spec = f"bridge:{spec}"
    kind, sep, arg = spec.partition(":")
    if not sep:
        raise ModelConfigError(f"bad model spec {spec!r}; use table:<path>, ngram:<path> or bridge:<url>")
    if kind == "bridge":
        url = os.environ.get(BRIDGE_URL_ENV, arg)
        vocab = Vocabulary.load(vocab_path) if vocab_path else None
        return BridgeModel(url, vocab=vocab)
    if vocab_path is None:
        raise ModelConfigError(f"model spec {spec!r} needs --vocab")
    vocab = Vocabulary.load(vocab_path)
    if kind == "table":
        return TableModel.from_config_file(arg, vocab)
    if kind == "ngram":
        with open(arg, encoding="utf-8") as fh:
            return NGramModel.from_corpus(vocab, fh.read(), order=ngram_order, smoothing=ngram_smoothing)
    raise ModelConfigError(f"unknown model kind {kind!r}")


def _load_kbs(args) -> dict:
    kbs = {}
    if getattr(args, "hierarchy_kb", None):
        kbs["hierarchy"] = HierarchyKB.load(args.hierarchy_kb)
    if getattr(args, "property_kb", None):
        kbs["property"] = PropertyKB.load(args.property_kb)
    return kbs


def _cmd_build_kb(args) -> int:
    if args.kind == "hierarchy":
        kb = HierarchyKB.load(args.input)
        leaves = kb.leaf_ids()
        print(
            f"hierarchy kb: {len(kb)} nodes, {len(kb.roots())} roots, {len(leaves)} leaves"
        )
    else:
        kb = PropertyKB.load(args.input)
        names = {n for pair in kb.pairs() for n in kb.names(pair)}
        print(f"property kb: {len(kb.pairs())} pairs across {len(kb.properties)} properties, {len(names)} names")
    if args.output:
        kb.save(args.output)
        print(f"wrote normalized kb to {args.output}")
    return 0


def _cmd_build_dataset(args) -> int:
    templates = benchmark.load_templates(args.templates)
    scorer = None
    if args.scorer_model:
        scorer = _load_model(args.scorer_model, args.vocab, args.ngram_order, args.ngram_smoothing)
    import numpy as np

    rng = np.random.default_rng(args.seed)
    if args.kind == "hierarchy":
        kb = HierarchyKB.load(args.kb)
        sampler = lambda i: benchmark.sample_hierarchy_instance(kb, rng, scorer, instance_id=f"base-{i:06d}")
    else:
        kb = PropertyKB.load(args.kb)
        sampler = lambda i: benchmark.sample_property_instance(kb, rng, scorer, instance_id=f"base-{i:06d}")
    sizes = tuple(args.sizes)
    partition = tuple(args.template_partition)
    base_count = sum(-(-size // args.fanout) for size in sizes)
    instances = [sampler(i) for i in range(base_count)]
    train, dev, test = benchmark.build_splits(
        instances, templates, sizes, rng, template_partition=partition, fanout=args.fanout
    )
    os.makedirs(args.out_dir, exist_ok=True)
    for split in (train, dev, test):
        path = os.path.join(args.out_dir, f"{split.name}.jsonl")
        benchmark.write_dataset(path, split.instances)
        print(f"wrote {len(split.instances)} instances to {path} (templates {list(split.template_ids)})")
    return 0


def _make_config(args) -> decoder.GuidanceConfig:
    return decoder.GuidanceConfig(
        strategy=args.strategy,
        alpha=args.alpha,
        beta=args.beta,
        max_tokens=args.max_tokens,
        k_topic=args.k_topic,
        k_constraint=args.k_constraint,
        trie_enabled=not args.no_trie,
        trie_budget=args.trie_budget,
        top_p=args.top_p,
        beams=args.beams,
        lookahead=args.lookahead,
        verifier_topic=args.verifier_topic,
        topk_fallback=not args.no_topk_fallback,
        seed=args.seed,
    )


def _cmd_generate(args) -> int:
    instances = benchmark.read_dataset(args.dataset)
    model = _load_model(args.model, args.vocab, args.ngram_order, args.ngram_smoothing)
    guide = model
    if args.guide_model:
        guide = _load_model(args.guide_model, args.vocab, args.ngram_order, args.ngram_smoothing)
    kbs = _load_kbs(args)
    config = _make_config(args)
    cache = guidance.load_guidance_cache(args.guidance_cache) if args.guidance_cache and os.path.exists(args.guidance_cache) else {}
    if args.guidance_cache and config.strategy == "textual":
        # fill the cache so later runs skip guidance regeneration; the seeds
        # match the decoder's per-polarity derivation
        for instance in instances:
            if instance.instance_id in cache:
                continue
            cache[instance.instance_id] = {
                "topic": guidance.generate_textual_examples(
                    guide, instance.topic_name, budget=config.trie_budget,
                    top_p=config.top_p, beams=config.beams, seed=config.seed,
                ),
                "constraint": guidance.generate_textual_examples(
                    guide, instance.constraint_name, budget=config.trie_budget,
                    top_p=config.top_p, beams=config.beams, seed=config.seed + 1,
                ),
            }
        guidance.save_guidance_cache(args.guidance_cache, cache)

    def run_one(instance):
        result = decoder.generate(
            model,
            instance,
            guide_model=guide,
            kb=kbs or None,
            config=config,
            guidance_examples=cache.get(instance.instance_id),
        )
        return instance.instance_id, result

    if args.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.workers) as pool:
            outputs = list(pool.map(run_one, instances))
    else:
        outputs = [run_one(inst) for inst in instances]

    with open(args.out, "w", encoding="utf-8") as fh:
        for instance_id, result in outputs:
            record = {
                "id": instance_id,
                "text": result.text,
                "tokens": list(result.token_ids),
                "trace": result.trace.summary(),
                "config": config.to_json_dict(),
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"wrote {len(outputs)} generations to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    instances = benchmark.read_dataset(args.dataset)
    generations = {}
    with open(args.generations, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                record = json.loads(line)
                generations[record["id"]] = record["text"]
    kbs = _load_kbs(args)
    scorer = None
    if args.scorer_model:
        scorer = _load_model(args.scorer_model, args.vocab, args.ngram_order, args.ngram_smoothing)

    report = metrics.evaluate_dataset(
        generations,
        instances,
        kbs,
        scorer=scorer,
        truncate_words=args.truncate_words,
        workers=args.workers,
    )
    metrics.write_report(report, args.out_report, args.out_text, args.out_csv)
    print(report.to_text(), end="")
    return 0


def _cmd_report(args) -> int:
    with open(args.report, encoding="utf-8") as fh:
        blob = json.load(fh)
    report = metrics.EvalReport(
        count=blob["count"],
        ic=blob["ic"],
        on_topic_rate=blob["on_topic_rate"],
        violation_rate=blob["violation_rate"],
        mean_copy_bleu=blob["mean_copy_bleu"],
        rep_rates={int(n): r for n, r in blob["rep_rates"].items()},
        mean_ppl=blob["mean_ppl"],
        topic_breakdown=blob.get("topic_breakdown", {}),
        constraint_breakdown=blob.get("constraint_breakdown", {}),
    )
    print(report.to_text(), end="")
    return 0


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guided-decode",
        description="Guided text generation engine and benchmark harness.",
    )
    parser.add_argument("--config", help="JSON file supplying defaults for any flag")
    sub = parser.add_subparsers(dest="command", required=True)
    formatter = argparse.ArgumentDefaultsHelpFormatter

    def add_model_flags(p):
        p.add_argument("--model", required=True, help="table:<config> | ngram:<corpus> | bridge:<url>")
        p.add_argument("--vocab", help="vocabulary file for local mock models")
        p.add_argument("--ngram-order", type=int, default=2, help="n-gram model order")
        p.add_argument("--ngram-smoothing", type=float, default=1.0, help="additive smoothing constant")

    p = sub.add_parser("build-kb", formatter_class=formatter, help="validate and normalize a knowledge base file")
    p.add_argument("--kind", choices=("hierarchy", "property"), required=True, help="knowledge base kind")
    p.add_argument("--input", required=True, help="knowledge base file to read")
    p.add_argument("--output", help="write a normalized copy here")
    p.set_defaults(func=_cmd_build_kb)

    p = sub.add_parser("build-dataset", formatter_class=formatter, help="sample instances and build splits")
    p.add_argument("--kind", choices=("hierarchy", "property"), required=True, help="knowledge base kind")
    p.add_argument("--kb", required=True, help="knowledge base file")
    p.add_argument("--templates", help="template file (defaults to the packaged seed templates)")
    p.add_argument("--sizes", type=_int_list, default=[200, 50, 50], help="train,dev,test instance counts")
    p.add_argument("--template-partition", type=_int_list, default=[3, 3, 3],
                   help="train,dev,test template counts (3,3,29 at full scale)")
    p.add_argument("--fanout", type=int, default=1, help="renders per base instance")
    p.add_argument("--scorer-model", help="optional model spec for tempting-constraint selection")
    p.add_argument("--vocab", help="vocabulary for the scorer model")
    p.add_argument("--ngram-order", type=int, default=2, help="n-gram model order")
    p.add_argument("--ngram-smoothing", type=float, default=1.0, help="additive smoothing constant")
    p.add_argument("--seed", type=int, default=0, help="seed for all sampling")
    p.add_argument("--out-dir", required=True, help="directory for train/dev/test jsonl files")
    p.set_defaults(func=_cmd_build_dataset)

    p = sub.add_parser("generate", formatter_class=formatter, help="guided generation over a dataset")
    p.add_argument("--dataset", required=True, help="instance jsonl file")
    add_model_flags(p)
    p.add_argument("--guide-model", help="separate guidance model spec (defaults to --model)")
    p.add_argument("--strategy", choices=decoder.STRATEGIES, default="textual", help="guidance strategy")
    p.add_argument("--alpha", type=float, default=5.0, help="topic guidance strength")
    p.add_argument("--beta", type=float, default=100.0, help="constraint guidance strength")
    p.add_argument("--k-topic", type=int, default=guidance.DEFAULT_K_TOPIC, help="top-k size for topic guidance")
    p.add_argument("--k-constraint", type=int, default=guidance.DEFAULT_K_CONSTRAINT,
                   help="top-k size for constraint guidance")
    p.add_argument("--trie-budget", type=int, default=guidance.DEFAULT_TRIE_BUDGET,
                   help="token budget for textual example generation")
    p.add_argument("--top-p", type=float, default=guidance.DEFAULT_TOP_P, help="nucleus mass for textual sampling")
    p.add_argument("--beams", type=int, default=guidance.DEFAULT_BEAMS, help="independent sampled beams pooled for the trie")
    p.add_argument("--lookahead", type=int, default=guidance.DEFAULT_LOOKAHEAD,
                   help="greedy look-ahead steps for the verifier")
    p.add_argument("--max-tokens", type=int, default=64, help="maximum generated tokens per instance")
    p.add_argument("--no-trie", action="store_true", help="bag-of-tokens ablation for trie strategies")
    p.add_argument("--verifier-topic", action="store_true", help="apply the verifier to the topic side too")
    p.add_argument("--no-topk-fallback", action="store_true",
                   help="error instead of falling back to top-k when textual examples are empty")
    p.add_argument("--hierarchy-kb", help="hierarchy KB file (needed for oracle guidance)")
    p.add_argument("--property-kb", help="property KB file (needed for oracle guidance)")
    p.add_argument("--guidance-cache", help="JSON cache of per-instance guidance examples")
    p.add_argument("--seed", type=int, default=0, help="seed for all sampling")
    p.add_argument("--workers", type=int, default=1, help="concurrent decodes; output keeps input order")
    p.add_argument("--out", required=True, help="output jsonl path")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("evaluate", formatter_class=formatter, help="score generations against a dataset")
    p.add_argument("--dataset", required=True, help="instance jsonl file")
    p.add_argument("--generations", required=True, help="generation jsonl file")
    p.add_argument("--hierarchy-kb", help="hierarchy KB file for the checkers")
    p.add_argument("--property-kb", help="property KB file for the checkers")
    p.add_argument("--scorer-model", help="optional model spec for perplexity")
    p.add_argument("--vocab", help="vocabulary for the scorer model")
    p.add_argument("--ngram-order", type=int, default=2, help="n-gram model order")
    p.add_argument("--ngram-smoothing", type=float, default=1.0, help="additive smoothing constant")
    p.add_argument("--truncate-words", type=int, help="clip generations to their first N word tokens")
    p.add_argument("--workers", type=int, default=1, help="concurrent evaluation workers")
    p.add_argument("--seed", type=int, default=0, help="seed for all sampling")
    p.add_argument("--out-report", required=True, help="JSON report path")
    p.add_argument("--out-text", help="aligned text report path")
    p.add_argument("--out-csv", help="per-category CSV path")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", formatter_class=formatter, help="render a JSON report as text")
    p.add_argument("--report", required=True, help="JSON report to render")
    p.set_defaults(func=_cmd_report)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Inject config-file values as defaults; command line wins."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return argv
    with open(known.config, encoding="utf-8") as fh:
        values = json.load(fh)
    for sub_action in parser._subparsers._group_actions:  # type: ignore[union-attr]
        for sub in sub_action.choices.values():  # type: ignore[union-attr]
            defaults = {}
            for key, value in values.items():
                dest = key.replace("-", "_")
                for action in sub._actions:
                    if action.dest == dest:
                        defaults[dest] = value
                        action.required = False
            sub.set_defaults(**defaults)
    return argv


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _MODEL_ERRORS as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (OSError, json.JSONDecodeError, GuidedDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run(sys.argv[1:]))
