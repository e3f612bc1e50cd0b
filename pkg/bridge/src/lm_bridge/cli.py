"""Command line for the bridge: pretrain a tiny model, serve it, build
distillation records, and train prefix bundles."""
from __future__ import annotations

import argparse
import sys

SYNTHETIC_WORLD = {
    "fruit": ["apple", "banana", "cherry", "mango", "plum"],
    "metal": ["iron", "copper", "silver", "gold"],
    "color": ["red", "blue", "green", "yellow"],
    "bird": ["sparrow", "eagle", "owl", "finch"],
}


def synthetic_corpus() -> list[str]:
    """List-style sentences over a tiny category world; enough for the
    example query to produce parseable guidance phrases."""
    lines = []
    for category, members in SYNTHETIC_WORLD.items():
        for start in range(len(members)):
            listed = members[start:] + members[:start]
            lines.append(f"What are some examples of {category}? " + " , ".join(listed[:3]))
            lines.append(f"Write down examples of {category}. " + " , ".join(listed[:4]))
        for member in members:
            lines.append(f"- {member} is an example of {category}.")
    return lines


def _cmd_make_tiny(args) -> int:
    from .modeling import build_tiny

    if args.corpus:
        with open(args.corpus, encoding="utf-8") as fh:
            lines = [line.strip() for line in fh if line.strip()]
    else:
        lines = synthetic_corpus()
    build_tiny(
        lines,
        args.out,
        n_embd=args.embd,
        n_layer=args.layers,
        n_head=args.heads,
        steps=args.steps,
        lr=args.lr,
        seed=args.seed,
    )
    print(f"wrote tiny model to {args.out} ({len(lines)} corpus lines)")
    return 0


def _cmd_serve(args) -> int:
    from .server import serve

    serve(
        args.model,
        args.port,
        host=args.host,
        topic_bundle=args.topic_bundle,
        constraint_bundle=args.constraint_bundle,
    )
    return 0


def _cmd_build_distill(args) -> int:
    from .distill_data import build_distillation_set, read_dataset, save_records
    from .modeling import load_model

    loaded = load_model(args.model)
    dataset = read_dataset(args.dataset)
    records = build_distillation_set(
        loaded,
        dataset,
        args.polarity,
        budget=args.budget,
        top_p=args.top_p,
        beams=args.beams,
        seed=args.seed,
    )
    save_records(args.out, records)
    print(f"wrote {len(records)} records to {args.out} (skipped {len(dataset) - len(records)})")
    return 0


def _cmd_distill(args) -> int:
    from .distill_data import load_records
    from .modeling import load_model, param_checksum
    from .prefix import distill

    loaded = load_model(args.model)
    before = param_checksum(loaded.model)
    records = load_records(args.records)
    bundle, losses = distill(
        loaded,
        records,
        prefix_len=args.prefix_len,
        hidden=args.hidden,
        batch_size=args.batch_size,
        lr=args.lr,
        epochs=args.epochs,
        seed=args.seed,
        polarity=args.polarity,
    )
    assert param_checksum(loaded.model) == before, "base model parameters changed"
    bundle.save(args.out)
    print(f"trained on {len(records)} records; loss {losses[0]:.4f} -> {losses[-1]:.4f}; saved {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lm-bridge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    formatter = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("make-tiny", formatter_class=formatter, help="pretrain a tiny model from scratch")
    p.add_argument("--out", required=True, help="output model directory")
    p.add_argument("--corpus", help="text corpus (one sentence per line); synthetic world when omitted")
    p.add_argument("--embd", type=int, default=64, help="embedding width")
    p.add_argument("--layers", type=int, default=2, help="transformer layers")
    p.add_argument("--heads", type=int, default=2, help="attention heads")
    p.add_argument("--steps", type=int, default=300, help="pretraining steps")
    p.add_argument("--lr", type=float, default=1e-3, help="pretraining learning rate")
    p.add_argument("--seed", type=int, default=0, help="seed")
    p.set_defaults(func=_cmd_make_tiny)

    p = sub.add_parser("serve", formatter_class=formatter, help="serve a model over the wire protocol")
    p.add_argument("--model", required=True, help="model directory (weights + vocab.txt)")
    p.add_argument("--port", type=int, default=8777, help="port")
    p.add_argument("--host", default="127.0.0.1", help="bind host")
    p.add_argument("--topic-bundle", help="prefix bundle for /guide polarity=topic")
    p.add_argument("--constraint-bundle", help="prefix bundle for /guide polarity=constraint")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("build-distill", formatter_class=formatter,
                       help="generate guidance targets for a dataset's instances")
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--dataset", required=True, help="instance jsonl (engine dataset format)")
    p.add_argument("--polarity", choices=("topic", "constraint"), required=True, help="guidance side")
    p.add_argument("--budget", type=int, default=64, help="sampled tokens per instance")
    p.add_argument("--top-p", type=float, default=0.95, help="nucleus mass")
    p.add_argument("--beams", type=int, default=2, help="pooled sampled beams")
    p.add_argument("--seed", type=int, default=0, help="seed")
    p.add_argument("--out", required=True, help="records jsonl path")
    p.set_defaults(func=_cmd_build_distill)

    p = sub.add_parser("distill", formatter_class=formatter, help="prefix-tune on distillation records")
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--records", required=True, help="records jsonl path")
    p.add_argument("--polarity", choices=("topic", "constraint"), default="topic", help="bundle polarity tag")
    p.add_argument("--prefix-len", type=int, default=10, help="prefix tokens")
    p.add_argument("--hidden", type=int, default=512, help="projection MLP hidden size")
    p.add_argument("--batch-size", type=int, default=16, help="training batch size")
    p.add_argument("--lr", type=float, default=3e-5, help="learning rate")
    p.add_argument("--epochs", type=int, default=20, help="training epochs")
    p.add_argument("--seed", type=int, default=0, help="seed")
    p.add_argument("--out", required=True, help="bundle output path")
    p.set_defaults(func=_cmd_distill)

    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return args.func(args)


def main() -> None:
    sys.exit(run(sys.argv[1:]))
