"""Building distillation records from a benchmark dataset file.

Reads the engine's dataset JSONL format ({id, rendered, topic: {name},
constraint: {name}, ...}); for each instance the model answers the
explicit example query for the chosen polarity's entity, the answer is
parsed into phrases, and the (rendered instruction -> newline-joined
phrases) pair becomes one record. Instances whose query generation
parses to nothing are skipped with a log line.
"""
from __future__ import annotations

import json
import logging
import re
from collections.abc import Sequence

from .modeling import LoadedModel, generate
from .prefix import DistillationRecord

log = logging.getLogger(__name__)

EXAMPLE_QUERY = "What are some examples of [entity]?"


def parse_phrases(text: str) -> list[str]:
    """Same phrase-splitting rule as the engine's textual guidance:
    newlines, list dashes and commas separate phrases; trim edge
    punctuation; drop empties; deduplicate case-insensitively."""
    phrases: list[str] = []
    seen: set[str] = set()
    for segment in re.split(r"[\n,]", text):
        phrase = segment.strip()
        phrase = re.sub(r"^[-*]\s*", "", phrase)
        phrase = phrase.strip(" .;:!?\"'")
        if not phrase:
            continue
        key = phrase.lower()
        if key not in seen:
            seen.add(key)
            phrases.append(phrase)
    return phrases


def read_dataset(path: str) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def query_examples(
    loaded: LoadedModel,
    entity: str,
    budget: int = 64,
    top_p: float = 0.95,
    beams: int = 2,
    seed: int = 0,
    query: str = EXAMPLE_QUERY,
) -> list[str]:
    """Pooled top-p sampled answers to the example query, parsed to phrases."""
    ids = loaded.tokenizer.encode(query.replace("[entity]", entity))
    per_beam = -(-budget // beams)
    texts = []
    for beam in range(beams):
        out = generate(loaded, ids, per_beam, mode="top_p", p=top_p, seed=seed * 1000 + beam)
        out = [t for t in out if t != loaded.tokenizer.eos_id]
        texts.append(loaded.tokenizer.decode(out))
    return parse_phrases("\n".join(texts))


def build_distillation_set(
    loaded: LoadedModel,
    dataset: Sequence[dict],
    polarity: str,
    budget: int = 64,
    top_p: float = 0.95,
    beams: int = 2,
    seed: int = 0,
    query: str = EXAMPLE_QUERY,
) -> list[DistillationRecord]:
    """One record per instance: rendered instruction paired with the
    model's own guidance phrases for the instance's topic or constraint."""
    if polarity not in ("topic", "constraint"):
        raise ValueError(f"unknown polarity {polarity!r}")
    records: list[DistillationRecord] = []
    for instance in dataset:
        rendered = instance.get("rendered")
        entity = instance.get(polarity, {}).get("name")
        if not rendered or not entity:
            log.warning("instance %s lacks rendered text or %s name; skipped", instance.get("id"), polarity)
            continue
        phrases = query_examples(loaded, entity, budget=budget, top_p=top_p, beams=beams, seed=seed, query=query)
        if not phrases:
            log.warning("instance %s: empty guidance generation for %r; skipped", instance.get("id"), entity)
            continue
        records.append(DistillationRecord(instruction=rendered, target="\n".join(phrases)))
    return records


def save_records(path: str, records: Sequence[DistillationRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps({"instruction": record.instruction, "target": record.target}) + "\n")


def load_records(path: str) -> list[DistillationRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                blob = json.loads(line)
                out.append(DistillationRecord(instruction=blob["instruction"], target=blob["target"]))
    return out
