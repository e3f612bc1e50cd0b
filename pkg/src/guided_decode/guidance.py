"""Guidance construction: tries, binary verifier, top-k, textual examples.

A guidance step is a sparse set of token ids over the vocabulary; the
decoder turns it into a 0/1 indicator scaled by the guidance strength.
Three strategies produce the sets: a per-step binary verifier over a
greedy look-ahead span, a one-shot top-k of the next-token distribution
after an example query, and textual example generation compiled into a
token trie whose cursor tracks progress across steps.
"""
from __future__ import annotations

import json
import re
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from functools import cache

import numpy as np

from . import kernels
from . import models as model_ops
from ._data import data_text
from .errors import MissingYesNoError

TOPIC = "topic"
CONSTRAINT = "constraint"

DEFAULT_LOOKAHEAD = 8
DEFAULT_TRIE_BUDGET = 200
DEFAULT_TOP_P = 0.95
DEFAULT_BEAMS = 4
DEFAULT_K_TOPIC = 20
DEFAULT_K_CONSTRAINT = 40


@dataclass(frozen=True)
class GuidanceStep:
    """Sparse 0/1 indicator over the vocabulary for one decoding step."""

    token_ids: frozenset[int]
    polarity: str

    def __post_init__(self) -> None:
        if self.polarity not in (TOPIC, CONSTRAINT):
            raise ValueError(f"unknown polarity {self.polarity!r}")

    @classmethod
    def empty(cls, polarity: str) -> "GuidanceStep":
        return cls(frozenset(), polarity)


@dataclass(frozen=True)
class QueryTemplate:
    """Prompt pattern for querying the guidance model."""

    kind: str
    pattern: str

    def fill(self, entity: str, candidate: str | None = None) -> str:
        out = self.pattern.replace("[entity]", entity)
        if self.kind == "verifier":
            if candidate is None:
                raise ValueError("verifier query needs a candidate")
            out = out.replace("[candidate]", candidate)
        return out


VERIFIER_QUERY = QueryTemplate("verifier", "Is [candidate] a type of [entity]?")
EXAMPLE_QUERY = QueryTemplate("example", "What are some examples of [entity]?")


class _TrieNode:
    __slots__ = ("children", "terminal")

    def __init__(self) -> None:
        self.children: dict[int, _TrieNode] = {}
        self.terminal = False


class GuidanceTrie:
    """Token trie over guidance example tokenizations."""

    def __init__(self, sequences: Iterable[Sequence[int]] = ()):
        self.root = _TrieNode()
        self._count = 0
        for seq in sequences:
            self.add(seq)

    def add(self, sequence: Sequence[int]) -> None:
        if not sequence:
            return
        node = self.root
        for token_id in sequence:
            node = node.children.setdefault(token_id, _TrieNode())
        if not node.terminal:
            node.terminal = True
            self._count += 1

    def __len__(self) -> int:
        return self._count

    def contains(self, sequence: Sequence[int]) -> bool:
        node = self.root
        for token_id in sequence:
            nxt = node.children.get(token_id)
            if nxt is None:
                return False
            node = nxt
        return node.terminal

    def all_tokens(self) -> frozenset[int]:
        """Every token id stored anywhere in the trie (bag-of-tokens view)."""
        out: set[int] = set()
        stack = [self.root]
        while stack:
            node = stack.pop()
            out.update(node.children)
            stack.extend(node.children.values())
        return frozenset(out)


class TrieCursor:
    """Tracks guidance progress through a trie across decoding steps."""

    def __init__(self, trie: GuidanceTrie, polarity: str):
        self.trie = trie
        self.polarity = polarity
        self.node = trie.root
        self.resets = 0

    def step(self, last_token: int | None) -> GuidanceStep:
        """Advance on the last generated token and return the new guidance.

        Descends when ``last_token`` is a child of the current node; on a
        miss, or after completing a terminal path with no continuation,
        the cursor resets to the root.
        """
        if last_token is not None:
            child = self.node.children.get(last_token)
            if child is None:
                if self.node is not self.trie.root:
                    self.resets += 1
                self.node = self.trie.root
            elif child.terminal and not child.children:
                self.resets += 1
                self.node = self.trie.root
            else:
                self.node = child
        return GuidanceStep(frozenset(self.node.children), self.polarity)


def build_trie(examples: Iterable[str], tokenizer: Callable[[str], Sequence[int]]) -> GuidanceTrie:
    """Compile example strings into a trie of their tokenizations."""
    return GuidanceTrie(tokenizer(example) for example in examples)


def trie_step(cursor: TrieCursor, last_token: int | None) -> GuidanceStep:
    return cursor.step(last_token)


@cache
def stopwords() -> frozenset[str]:
    text = data_text("stopwords.txt")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def _is_content(surface: str) -> bool:
    return surface.isalpha() and surface.lower() not in stopwords()


def lookahead_span(model, ctx: Sequence[int], max_steps: int = DEFAULT_LOOKAHEAD) -> tuple[list[int], str]:
    """Greedy look-ahead, reduced to its first contiguous content span.

    Content tokens are alphabetic non-stopwords; leading non-content
    tokens are skipped. Returns the span's token ids and surface string
    (both empty when the continuation has no content run).
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    continuation = model_ops.greedy_continue(model, ctx, max_steps)
    span_ids: list[int] = []
    surfaces: list[str] = []
    for token_id in continuation:
        surface = model.detokenize([token_id])
        if _is_content(surface):
            span_ids.append(token_id)
            surfaces.append(surface)
        elif span_ids:
            break
    return span_ids, " ".join(surfaces)


def _single_token(model, word: str) -> int:
    ids = model.tokenize(word)
    if len(ids) != 1 or (model.unk_id is not None and ids[0] == model.unk_id):
        raise MissingYesNoError(f"vocabulary has no usable token for {word!r}")
    return ids[0]


def binary_verify(
    model,
    candidate: str,
    entity: str,
    query: QueryTemplate = VERIFIER_QUERY,
    yes_word: str = "yes",
    no_word: str = "no",
) -> bool:
    """True iff P(yes) strictly exceeds P(no) after the verifier query."""
    if not candidate or not entity:
        raise ValueError("candidate and entity must be nonempty")
    yes_id = _single_token(model, yes_word)
    no_id = _single_token(model, no_word)
    logits = model_ops.next_logits(model, model.tokenize(query.fill(entity, candidate)))
    return bool(logits[yes_id] > logits[no_id])


def verifier_guidance(
    model,
    ctx: Sequence[int],
    entity: str,
    polarity: str,
    verify_model=None,
    max_steps: int = DEFAULT_LOOKAHEAD,
    query: QueryTemplate = VERIFIER_QUERY,
) -> GuidanceStep:
    """Look ahead from ``ctx``, verify the span against ``entity``, and
    return the span's token set when the verifier answers yes."""
    span_ids, surface = lookahead_span(model, ctx, max_steps)
    if span_ids and binary_verify(verify_model or model, surface, entity, query=query):
        return GuidanceStep(frozenset(span_ids), polarity)
    return GuidanceStep.empty(polarity)


def topk_guidance(
    model,
    entity: str,
    k: int,
    polarity: str,
    query: QueryTemplate = EXAMPLE_QUERY,
) -> GuidanceStep:
    """Top-k token ids of the next-token distribution after the example
    query; constant across decoding steps. Ties break toward lower ids."""
    if k < 1:
        raise ValueError("k must be >= 1")
    logits = model_ops.next_logits(model, model.tokenize(query.fill(entity)))
    ids = kernels.topk_low(np.ascontiguousarray(logits, dtype=np.float64), k)
    return GuidanceStep(frozenset(int(i) for i in ids), polarity)


def _sample_top_p(model, ctx: list[int], steps: int, top_p: float, rng: np.random.Generator) -> list[int]:
    out: list[int] = []
    running = list(ctx)
    for _ in range(steps):
        logits = np.ascontiguousarray(model_ops.next_logits(model, running), dtype=np.float64)
        probs = kernels.softmax(logits)
        order = np.argsort(-probs, kind="stable")
        cumulative = np.cumsum(probs[order])
        cutoff = int(np.searchsorted(cumulative, top_p)) + 1
        keep = order[:cutoff]
        kept = probs[keep]
        kept = kept / kept.sum()
        token = int(keep[int(rng.choice(len(keep), p=kept))])
        out.append(token)
        running.append(token)
        if model.eos_id is not None and token == model.eos_id:
            break
    return out


def parse_phrases(text: str) -> list[str]:
    """Split generated guidance text into candidate phrases.

    Splits on newlines, list dashes and commas, trims whitespace and edge
    punctuation, drops empties and deduplicates case-insensitively.
    """
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


def generate_textual_examples(
    model,
    entity: str,
    budget: int = DEFAULT_TRIE_BUDGET,
    top_p: float = DEFAULT_TOP_P,
    beams: int = DEFAULT_BEAMS,
    seed: int = 0,
    query: QueryTemplate = EXAMPLE_QUERY,
) -> list[str]:
    """Sample guidance text and parse it into example phrases.

    ``beams`` independent top-p sampled continuations (distinct seeds)
    share the token ``budget``; their texts are pooled before parsing.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if beams < 1:
        raise ValueError("beams must be >= 1")
    ctx = model.tokenize(query.fill(entity))
    per_beam = -(-budget // beams)
    texts = []
    for beam in range(beams):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(beam,)))
        ids = _sample_top_p(model, ctx, per_beam, top_p, rng)
        if model.eos_id is not None:
            ids = [i for i in ids if i != model.eos_id]
        texts.append(model.detokenize(ids))
    return parse_phrases("\n".join(texts))


def oracle_examples(kb, ref) -> list[str]:
    """True member surface forms from the knowledge base, sorted."""
    return sorted(kb.members(ref))


def save_guidance_cache(path: str, cache_data: dict[str, dict[str, list[str]]]) -> None:
    """Persist per-instance guidance examples: {id: {topic: [...], constraint: [...]}}."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cache_data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_guidance_cache(path: str) -> dict[str, dict[str, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
