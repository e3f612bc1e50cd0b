"""Evaluation metrics and aggregate reporting.

Correctness: instruction conformance (on-topic and not violating), plus
the separate on-topic and violation rates. Fluency: Copy-BLEU against
the three demonstrations, n-gram repetition, and perplexity under a
pluggable scoring model.

The BLEU variant is pinned for reproducibility: word tokens are
lowercased alphanumeric runs, n-grams up to min(4, len(candidate)),
unsmoothed unigram precision (so zero lexical overlap scores 0), add-one
smoothed precisions for n >= 2, equal-weight geometric mean, and the
standard brevity penalty exp(1 - r/c) for c < r.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import models as model_ops
from .benchmark import InstructionInstance
from .errors import (
    EmptyDatasetError,
    EmptyTextError,
    MisalignedIdsError,
    TooShortError,
)
from .knowledge import on_topic as kb_on_topic
from .knowledge import resolve_kb, violates as kb_violates

REP_ORDERS = (1, 2)

_WORD = re.compile(r"[a-z0-9]+")


def word_tokens(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def _ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def _bleu_single(candidate: list[str], reference: list[str], max_n: int = 4) -> float:
    if not candidate or not reference:
        return 0.0
    orders = range(1, min(max_n, len(candidate)) + 1)
    log_precisions = []
    for n in orders:
        cand_counts = Counter(_ngrams(candidate, n))
        ref_counts = Counter(_ngrams(reference, n))
        clipped = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
        total = sum(cand_counts.values())
        if n == 1:
            if clipped == 0:
                return 0.0
            precision = clipped / total
        else:
            precision = (clipped + 1) / (total + 1)
        log_precisions.append(math.log(precision))
    c, r = len(candidate), len(reference)
    brevity = 1.0 if c >= r else math.exp(1 - r / c)
    return brevity * math.exp(sum(log_precisions) / len(log_precisions))


def copy_bleu(generation: str, demonstrations: Sequence[str], max_n: int = 4) -> float:
    """Maximum sentence BLEU between the generation and each demonstration."""
    if not generation:
        raise EmptyTextError("copy_bleu needs a nonempty generation")
    candidate = word_tokens(generation)
    return max(_bleu_single(candidate, word_tokens(demo), max_n) for demo in demonstrations)


def rep_n(tokens: Sequence, n: int) -> float:
    """1 minus the unique-to-total n-gram ratio."""
    if len(tokens) < n:
        raise TooShortError(f"need at least {n} tokens, got {len(tokens)}")
    grams = [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]
    return 1.0 - len(set(grams)) / len(grams)


def perplexity(scorer, text: str) -> float:
    """exp of the negative mean per-token log-probability under ``scorer``."""
    ids = scorer.tokenize(text)
    if not ids:
        raise EmptyTextError("text tokenizes to nothing")
    log_probs = model_ops.score_sequence(scorer, ids)
    return float(np.exp(-log_probs.mean()))


@dataclass(frozen=True)
class InstanceResult:
    instance_id: str
    on_topic: bool
    violated: bool
    copy_bleu: float
    rep: dict[int, float | None]
    ppl: float | None
    topic_category: str
    constraint_category: str

    @property
    def conforms(self) -> bool:
        return self.on_topic and not self.violated


def instruction_conformance(results: Sequence[InstanceResult]) -> float:
    """Fraction of results that are on-topic and non-violating."""
    if not results:
        raise EmptyDatasetError("no results to aggregate")
    return sum(r.conforms for r in results) / len(results)


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


@dataclass
class EvalReport:
    count: int
    ic: float
    on_topic_rate: float
    violation_rate: float
    mean_copy_bleu: float
    rep_rates: dict[int, float | None]
    mean_ppl: float | None
    topic_breakdown: dict[str, dict] = field(default_factory=dict)
    constraint_breakdown: dict[str, dict] = field(default_factory=dict)
    results: list[InstanceResult] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "count": self.count,
            "ic": self.ic,
            "on_topic_rate": self.on_topic_rate,
            "violation_rate": self.violation_rate,
            "mean_copy_bleu": self.mean_copy_bleu,
            "rep_rates": {str(n): r for n, r in sorted(self.rep_rates.items())},
            "mean_ppl": self.mean_ppl,
            "topic_breakdown": self.topic_breakdown,
            "constraint_breakdown": self.constraint_breakdown,
            "instances": [
                {
                    "id": r.instance_id,
                    "on_topic": r.on_topic,
                    "violated": r.violated,
                    "copy_bleu": r.copy_bleu,
                    "rep": {str(n): v for n, v in sorted(r.rep.items())},
                    "ppl": r.ppl,
                    "topic_category": r.topic_category,
                    "constraint_category": r.constraint_category,
                }
                for r in self.results
            ],
        }

    def to_text(self) -> str:
        def fmt(value, width=8):
            if value is None:
                return "n/a".rjust(width)
            return f"{value:.4f}".rjust(width)

        lines = [
            f"instances        {self.count:>8d}",
            f"IC               {fmt(self.ic)}",
            f"on-topic rate    {fmt(self.on_topic_rate)}",
            f"violation rate   {fmt(self.violation_rate)}",
            f"mean copy-BLEU   {fmt(self.mean_copy_bleu)}",
        ]
        for n, rate in sorted(self.rep_rates.items()):
            lines.append(f"rep-{n}            {fmt(rate)}")
        lines.append(f"mean PPL         {fmt(self.mean_ppl)}")
        if self.topic_breakdown:
            lines.append("")
            lines.append("by topic category      count       IC  on-topic")
            for category, row in sorted(self.topic_breakdown.items()):
                lines.append(
                    f"  {category:<20} {row['count']:>5d} {fmt(row['ic'])} {fmt(row['on_topic_rate'])}"
                )
        if self.constraint_breakdown:
            lines.append("")
            lines.append("by constraint category count       IC violation")
            for category, row in sorted(self.constraint_breakdown.items()):
                lines.append(
                    f"  {category:<20} {row['count']:>5d} {fmt(row['ic'])} {fmt(row['violation_rate'])}"
                )
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["side", "category", "count", "ic", "on_topic_rate", "violation_rate"])
        for category, row in sorted(self.topic_breakdown.items()):
            writer.writerow(["topic", category, row["count"], row["ic"], row["on_topic_rate"], ""])
        for category, row in sorted(self.constraint_breakdown.items()):
            writer.writerow(["constraint", category, row["count"], row["ic"], "", row["violation_rate"]])
        return buf.getvalue()


def _category(kb, instance: InstructionInstance, side: str) -> str:
    ref = instance.topic if side == "topic" else instance.constraint
    if isinstance(ref.ident, tuple):
        return ref.ident[0]
    node_kb = resolve_kb(kb, ref)
    return node_kb.name(node_kb.root_of(ref.ident))  # type: ignore[union-attr]


def evaluate_instance(
    generation: str,
    instance: InstructionInstance,
    kb,
    scorer=None,
    rep_orders: Sequence[int] = REP_ORDERS,
) -> InstanceResult:
    topic_kb = resolve_kb(kb, instance.topic)
    constraint_kb = resolve_kb(kb, instance.constraint)
    tokens = word_tokens(generation)
    rep: dict[int, float | None] = {}
    for n in rep_orders:
        rep[n] = rep_n(tokens, n) if len(tokens) >= n else None
    ppl = None
    if scorer is not None and generation.strip():
        ppl = perplexity(scorer, generation)
    return InstanceResult(
        instance_id=instance.instance_id,
        on_topic=kb_on_topic(topic_kb, generation, instance.topic),
        violated=kb_violates(constraint_kb, generation, instance.constraint),
        copy_bleu=copy_bleu(generation, [d.text for d in instance.demonstrations]) if generation else 0.0,
        rep=rep,
        ppl=ppl,
        topic_category=_category(kb, instance, "topic"),
        constraint_category=_category(kb, instance, "constraint"),
    )


def evaluate_dataset(
    generations: Mapping[str, str] | Sequence[tuple[str, str]],
    instances: Sequence[InstructionInstance],
    kb,
    scorer=None,
    truncate_words: int | None = None,
    rep_orders: Sequence[int] = REP_ORDERS,
    workers: int = 1,
) -> EvalReport:
    """Score generations against their instances and aggregate.

    ``generations`` maps instance ids to texts (or is a sequence of
    (id, text) pairs) and must align 1:1 with ``instances``.
    ``truncate_words`` optionally clips each generation to its first N
    word tokens before any metric is computed. With ``workers > 1``
    instances are scored concurrently; results are reduced in input
    order either way.
    """
    if not instances:
        raise EmptyDatasetError("no instances to evaluate")
    gen_map = dict(generations.items() if isinstance(generations, Mapping) else generations)
    ids = [inst.instance_id for inst in instances]
    if sorted(gen_map) != sorted(ids) or len(gen_map) != len(instances):
        missing = set(ids) - set(gen_map)
        extra = set(gen_map) - set(ids)
        raise MisalignedIdsError(f"generations misaligned with instances (missing {missing}, extra {extra})")

    def score_one(instance: InstructionInstance) -> InstanceResult:
        text = gen_map[instance.instance_id]
        if truncate_words is not None:
            text = " ".join(word_tokens(text)[:truncate_words])
        return evaluate_instance(text, instance, kb, scorer, rep_orders)

    if workers > 1:
        import concurrent.futures

        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(score_one, instances))
    else:
        results = [score_one(instance) for instance in instances]

    def bucket(rows: list[InstanceResult], with_topic: bool) -> dict:
        return {
            "count": len(rows),
            "ic": sum(r.conforms for r in rows) / len(rows),
            "on_topic_rate": sum(r.on_topic for r in rows) / len(rows) if with_topic else None,
            "violation_rate": sum(r.violated for r in rows) / len(rows),
        }

    topic_groups: dict[str, list[InstanceResult]] = {}
    constraint_groups: dict[str, list[InstanceResult]] = {}
    for result in results:
        topic_groups.setdefault(result.topic_category, []).append(result)
        constraint_groups.setdefault(result.constraint_category, []).append(result)

    rep_rates = {
        n: _mean([r.rep[n] for r in results if r.rep.get(n) is not None]) for n in rep_orders
    }
    ppl_values = [r.ppl for r in results if r.ppl is not None]
    return EvalReport(
        count=len(results),
        ic=instruction_conformance(results),
        on_topic_rate=sum(r.on_topic for r in results) / len(results),
        violation_rate=sum(r.violated for r in results) / len(results),
        mean_copy_bleu=sum(r.copy_bleu for r in results) / len(results),
        rep_rates=rep_rates,
        mean_ppl=_mean(ppl_values),
        topic_breakdown={c: bucket(rows, True) for c, rows in topic_groups.items()},
        constraint_breakdown={c: bucket(rows, False) for c, rows in constraint_groups.items()},
        results=results,
    )


def write_report(report: EvalReport, json_path: str | None, text_path: str | None = None, csv_path: str | None = None) -> None:
    if json_path:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    if text_path:
        with open(text_path, "w", encoding="utf-8") as fh:
            fh.write(report.to_text())
    if csv_path:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
