"""Model abstractions: vocabulary, deterministic mock models, bridge client.

Every model exposes the same small surface: ``vocab_size``, ``eos_id``,
``unk_id``, ``max_context``, ``tokenize``/``detokenize`` and
``next_logits``. The local mocks (:class:`TableModel`,
:class:`NGramModel`) are bit-deterministic and drive the whole test
suite; :class:`BridgeModel` speaks the HTTP wire protocol to a remote
model server.

Local models store next-token distributions as log-probabilities over
their support; tokens outside the support receive a finite floor 50
nats below the smallest supported log-probability, so logits stay
finite while softmax reproduces the stored distribution to well under
1e-9.
"""
from __future__ import annotations

import math
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np
import requests

from . import kernels
from .errors import (
    BridgeError,
    ContextTooLongError,
    ModelConfigError,
    UnknownTokenError,
    VocabularyError,
)

# Distance (in nats) of off-support logits below the smallest supported one.
OFF_SUPPORT_PENALTY = 50.0

DISTRIBUTION_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token list with special ids.

    Token ids are the positions in ``tokens`` and are stable for the
    lifetime of the vocabulary. Tokenization is whitespace splitting;
    words not in the vocabulary map to ``unk_id``. Detokenization joins
    with single spaces, so ``detokenize(tokenize(s))`` reproduces ``s``
    up to whitespace collapsing and unknown-word replacement.
    """

    tokens: tuple[str, ...]
    eos_id: int
    unk_id: int
    pad_id: int

    def __post_init__(self) -> None:
        if len(set(self.tokens)) != len(self.tokens):
            dupes = [t for t, c in Counter(self.tokens).items() if c > 1]
            raise VocabularyError(f"duplicate tokens: {dupes[:5]}")
        for name in ("eos_id", "unk_id", "pad_id"):
            value = getattr(self, name)
            if not 0 <= value < len(self.tokens):
                raise VocabularyError(f"{name}={value} outside vocabulary of size {len(self.tokens)}")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def with_specials(
        cls,
        words: Iterable[str],
        *,
        eos_token: str = "<eos>",
        unk_token: str = "<unk>",
        pad_token: str = "<pad>",
    ) -> "Vocabulary":
        """Build a vocabulary from plain words, appending missing specials."""
        tokens = list(dict.fromkeys(words))
        for special in (eos_token, unk_token, pad_token):
            if special not in tokens:
                tokens.append(special)
        return cls(
            tokens=tuple(tokens),
            eos_id=tokens.index(eos_token),
            unk_id=tokens.index(unk_token),
            pad_id=tokens.index(pad_token),
        )

    @property
    def size(self) -> int:
        return len(self.tokens)

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise UnknownTokenError(f"token id {token_id} outside vocabulary of size {len(self.tokens)}")
        return self.tokens[token_id]

    def id_of(self, token: str) -> int:
        """Exact id of ``token``, or ``unk_id`` when absent."""
        return self._index.get(token, self.unk_id)  # type: ignore[attr-defined]

    def tokenize(self, text: str) -> list[int]:
        return [self.id_of(w) for w in text.split()]

    def detokenize(self, ids: Sequence[int]) -> str:
        return " ".join(self.token(i) for i in ids)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"#eos={self.eos_id}\n#unk={self.unk_id}\n#pad={self.pad_id}\n")
            for token in self.tokens:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        """Read the one-token-per-line format with a ``#key=id`` header."""
        specials: dict[str, int] = {}
        tokens: list[str] = []
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if line.startswith("#"):
                    if tokens:
                        raise VocabularyError(f"{path}:{lineno}: header line after token lines")
                    key, _, value = line[1:].partition("=")
                    try:
                        specials[key.strip()] = int(value)
                    except ValueError as exc:
                        raise VocabularyError(f"{path}:{lineno}: bad header {line!r}") from exc
                else:
                    tokens.append(line)
        if "eos" not in specials or "unk" not in specials:
            raise VocabularyError(f"{path}: missing #eos or #unk header")
        return cls(
            tokens=tuple(tokens),
            eos_id=specials["eos"],
            unk_id=specials["unk"],
            pad_id=specials.get("pad", specials["eos"]),
        )


class LocalModel:
    """Common plumbing for vocabulary-backed deterministic models."""

    def __init__(self, vocab: Vocabulary, max_context: int = 4096):
        self.vocab = vocab
        self.max_context = max_context

    @property
    def vocab_size(self) -> int:
        return self.vocab.size

    @property
    def eos_id(self) -> int:
        return self.vocab.eos_id

    @property
    def unk_id(self) -> int:
        return self.vocab.unk_id

    def tokenize(self, text: str) -> list[int]:
        return self.vocab.tokenize(text)

    def detokenize(self, ids: Sequence[int]) -> str:
        return self.vocab.detokenize(ids)

    def next_logits(self, ctx: Sequence[int]) -> np.ndarray:
        raise NotImplementedError


def _distribution_logits(dist: Mapping[int, float], size: int) -> np.ndarray:
    """Dense logit vector (= log-probs over the support, floored elsewhere)."""
    if not dist:
        raise ModelConfigError("empty distribution")
    total = math.fsum(dist.values())
    if abs(total - 1.0) > DISTRIBUTION_TOLERANCE:
        raise ModelConfigError(f"distribution sums to {total!r}, not 1")
    log_probs = {}
    for token_id, prob in dist.items():
        if not 0 <= token_id < size:
            raise ModelConfigError(f"token id {token_id} outside vocabulary of size {size}")
        if not 0.0 < prob <= 1.0:
            raise ModelConfigError(f"probability {prob!r} for id {token_id} outside (0, 1]")
        log_probs[token_id] = math.log(prob)
    floor = min(log_probs.values()) - OFF_SUPPORT_PENALTY
    logits = np.full(size, floor, dtype=np.float64)
    for token_id, lp in log_probs.items():
        logits[token_id] = lp
    return logits


class TableModel(LocalModel):
    """Scripted model: context-suffix patterns map to next-token distributions.

    Lookup prefers the longest matching suffix; contexts matching no rule
    use the default distribution (uniform when none is given). Logit
    vectors are precomputed per distribution, so repeated queries are
    cheap and bit-identical.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        rules: Mapping[Sequence[str], Mapping[str, float]] | None = None,
        default: Mapping[str, float] | None = None,
        max_context: int = 4096,
    ):
        super().__init__(vocab, max_context)
        self._rules: dict[tuple[int, ...], np.ndarray] = {}
        self._max_suffix = 0
        for suffix, dist in (rules or {}).items():
            self.add_rule(suffix, dist)
        if default is None:
            uniform = {i: 1.0 / vocab.size for i in range(vocab.size)}
            self._default = _distribution_logits(uniform, vocab.size)
        else:
            self._default = _distribution_logits(self._to_ids(default), vocab.size)

    def _token_id(self, token: str) -> int:
        token_id = self.vocab.id_of(token)
        if token_id == self.vocab.unk_id and token != self.vocab.token(self.vocab.unk_id):
            raise ModelConfigError(f"rule refers to token {token!r} not in vocabulary")
        return token_id

    def _to_ids(self, dist: Mapping[str, float]) -> dict[int, float]:
        return {self._token_id(token): prob for token, prob in dist.items()}

    def add_rule(self, suffix: Sequence[str], dist: Mapping[str, float]) -> None:
        key = tuple(self._token_id(t) for t in suffix)
        self._rules[key] = _distribution_logits(self._to_ids(dist), self.vocab.size)
        self._max_suffix = max(self._max_suffix, len(key))

    def next_logits(self, ctx: Sequence[int]) -> np.ndarray:
        ctx = tuple(ctx)
        for length in range(min(len(ctx), self._max_suffix), 0, -1):
            hit = self._rules.get(ctx[-length:])
            if hit is not None:
                return hit.copy()
        return self._default.copy()

    def to_config_text(self) -> str:
        """Serialize to the ``RULE ... -> token:prob`` text format."""
        lines = []
        for suffix, logits in self._rules.items():
            lines.append(f"RULE {self._format_rule(suffix, logits)}")
        lines.append(f"DEFAULT {self._format_rule((), self._default)}")
        return "\n".join(lines) + "\n"

    def _format_rule(self, suffix: tuple[int, ...], logits: np.ndarray) -> str:
        floor = logits.min()
        parts = [self.vocab.token(i) for i in suffix]
        parts.append("->")
        support = np.nonzero(logits > floor)[0] if (logits > floor).any() else np.arange(len(logits))
        for token_id in support:
            parts.append(f"{self.vocab.token(int(token_id))}:{math.exp(logits[token_id])!r}")
        return " ".join(parts)

    @classmethod
    def from_config_text(cls, text: str, vocab: Vocabulary, max_context: int = 4096) -> "TableModel":
        rules: dict[tuple[str, ...], dict[str, float]] = {}
        default: dict[str, float] | None = None
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            head, sep, tail = line.partition("->")
            if not sep:
                raise ModelConfigError(f"line {lineno}: missing '->'")
            dist: dict[str, float] = {}
            for pair in tail.split():
                token, sep2, prob = pair.rpartition(":")
                if not sep2:
                    raise ModelConfigError(f"line {lineno}: bad pair {pair!r}")
                try:
                    dist[token] = float(prob)
                except ValueError as exc:
                    raise ModelConfigError(f"line {lineno}: bad probability in {pair!r}") from exc
            fields = head.split()
            if not fields:
                raise ModelConfigError(f"line {lineno}: missing rule keyword")
            keyword, suffix = fields[0], tuple(fields[1:])
            if keyword == "RULE":
                if not suffix:
                    raise ModelConfigError(f"line {lineno}: RULE needs at least one suffix token")
                rules[suffix] = dist
            elif keyword == "DEFAULT":
                if suffix:
                    raise ModelConfigError(f"line {lineno}: DEFAULT takes no suffix tokens")
                default = dist
            else:
                raise ModelConfigError(f"line {lineno}: unknown keyword {keyword!r}")
        return cls(vocab, rules=rules, default=default, max_context=max_context)

    @classmethod
    def from_config_file(cls, path: str, vocab: Vocabulary, max_context: int = 4096) -> "TableModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_config_text(fh.read(), vocab, max_context=max_context)


class NGramModel(LocalModel):
    """Additively smoothed n-gram model over token ids.

    Conditional probabilities are ``(c(ctx, w) + d) / (c(ctx) + d * V)``
    where ``V`` counts the distinct token types seen in training; the
    distribution's support is exactly those seen types. Count tables are
    kept for every order up to ``order`` so short contexts at sequence
    start back off to lower orders.
    """

    def __init__(self, vocab: Vocabulary, order: int = 2, smoothing: float = 1.0, max_context: int = 4096):
        super().__init__(vocab, max_context)
        if order < 1:
            raise ModelConfigError(f"order must be >= 1, got {order}")
        if smoothing <= 0:
            raise ModelConfigError(f"smoothing must be > 0, got {smoothing}")
        self.order = order
        self.smoothing = smoothing
        self._counts: dict[tuple[int, ...], Counter[int]] = {}
        self._seen: tuple[int, ...] = ()
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def fit(self, sequences: Iterable[Sequence[int]]) -> "NGramModel":
        seen: set[int] = set()
        for seq in sequences:
            seq = list(seq)
            seen.update(seq)
            for i, token in enumerate(seq):
                for length in range(min(i, self.order - 1) + 1):
                    prefix = tuple(seq[i - length : i])
                    self._counts.setdefault(prefix, Counter())[token] += 1
        self._seen = tuple(sorted(seen))
        self._cache.clear()
        if not self._seen:
            raise ModelConfigError("cannot fit an n-gram model on empty data")
        return self

    @classmethod
    def from_corpus(
        cls,
        vocab: Vocabulary,
        text: str,
        order: int = 2,
        smoothing: float = 1.0,
        max_context: int = 4096,
    ) -> "NGramModel":
        sequences = [vocab.tokenize(line) for line in text.splitlines() if line.strip()]
        return cls(vocab, order=order, smoothing=smoothing, max_context=max_context).fit(sequences)

    def next_logits(self, ctx: Sequence[int]) -> np.ndarray:
        if not self._seen:
            raise ModelConfigError("n-gram model is not fitted")
        length = min(self.order - 1, len(ctx))
        prefix = tuple(ctx[len(ctx) - length :])
        cached = self._cache.get(prefix)
        if cached is None:
            counts = self._counts.get(prefix, Counter())
            total = sum(counts.values())
            denom = total + self.smoothing * len(self._seen)
            dist = {t: (counts.get(t, 0) + self.smoothing) / denom for t in self._seen}
            cached = _distribution_logits(dist, self.vocab.size)
            self._cache[prefix] = cached
        return cached.copy()


class BridgeModel:
    """Client for a remote model served over the HTTP wire protocol.

    Tokenization is delegated to the server. When no vocabulary file is
    supplied, the vocabulary size is probed from a dense ``/logits`` call
    on the empty context and the special ids are unknown (``None``),
    which disables eos early-stopping.
    """

    def __init__(
        self,
        base_url: str,
        vocab: Vocabulary | None = None,
        top_n: int | None = None,
        timeout: float = 60.0,
        max_context: int = 1_000_000,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.vocab = vocab
        self.top_n = top_n
        self.timeout = timeout
        self.max_context = max_context
        self._session = session or requests.Session()
        if vocab is not None:
            self._vocab_size = vocab.size
            self.eos_id: int | None = vocab.eos_id
            self.unk_id: int | None = vocab.unk_id
        else:
            self._vocab_size = len(self._post("/logits", {"ids": []})["dense"])
            self.eos_id = None
            self.unk_id = None

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    def _post(self, endpoint: str, body: dict) -> dict:
        try:
            resp = self._session.post(self.base_url + endpoint, json=body, timeout=self.timeout)
        except requests.RequestException as exc:
            raise BridgeError(f"bridge request {endpoint} failed: {exc}") from exc
        if resp.status_code == 413:
            raise ContextTooLongError(f"bridge rejected context: {resp.text.strip()}")
        if resp.status_code != 200:
            raise BridgeError(f"bridge {endpoint} returned {resp.status_code}: {resp.text.strip()[:200]}")
        return resp.json()

    def tokenize(self, text: str) -> list[int]:
        return list(self._post("/tokenize", {"text": text})["ids"])

    def detokenize(self, ids: Sequence[int]) -> str:
        return self._post("/detokenize", {"ids": list(ids)})["text"]

    def next_logits(self, ctx: Sequence[int]) -> np.ndarray:
        body: dict = {"ids": list(ctx)}
        if self.top_n is not None:
            body["top_n"] = self.top_n
        payload = self._post("/logits", body)
        if "dense" in payload:
            logits = np.asarray(payload["dense"], dtype=np.float64)
            if len(logits) != self._vocab_size:
                raise BridgeError(
                    f"dense logits length {len(logits)} != vocabulary size {self._vocab_size}"
                )
            return logits
        pairs = payload["sparse"]
        if not pairs:
            raise BridgeError("sparse logits response is empty")
        floor = min(score for _, score in pairs) - 10.0
        logits = np.full(self._vocab_size, floor, dtype=np.float64)
        for token_id, score in pairs:
            logits[int(token_id)] = float(score)
        return logits

    def score_remote(self, ids: Sequence[int]) -> np.ndarray:
        """Per-token log-probs from the server's ``/score`` endpoint."""
        return np.asarray(self._post("/score", {"ids": list(ids)})["logprobs"], dtype=np.float64)

    def generate_remote(
        self,
        ids: Sequence[int],
        max_tokens: int,
        mode: str = "greedy",
        p: float | None = None,
        temperature: float | None = None,
        seed: int | None = None,
    ) -> tuple[list[int], str]:
        body: dict = {"ids": list(ids), "max_tokens": max_tokens, "mode": mode}
        if p is not None:
            body["p"] = p
        if temperature is not None:
            body["temperature"] = temperature
        if seed is not None:
            body["seed"] = seed
        payload = self._post("/generate", body)
        return list(payload["ids"]), payload["text"]


def _validate_ctx(model, ctx: Sequence[int]) -> None:
    if len(ctx) > model.max_context:
        raise ContextTooLongError(f"context of {len(ctx)} tokens exceeds limit {model.max_context}")
    for token_id in ctx:
        if not 0 <= token_id < model.vocab_size:
            raise UnknownTokenError(f"token id {token_id} outside vocabulary of size {model.vocab_size}")


def next_logits(model, ctx: Sequence[int]) -> np.ndarray:
    """Validated next-token logits for ``ctx``; softmax of the result is the
    model's next-token distribution."""
    _validate_ctx(model, ctx)
    return model.next_logits(ctx)


def greedy_continue(model, ctx: Sequence[int], steps: int) -> list[int]:
    """Greedy continuation of ``ctx`` by up to ``steps`` tokens.

    Argmax ties break toward the lowest token id. The continuation stops
    early only when eos is produced; eos is included in the output.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    _validate_ctx(model, ctx)
    out: list[int] = []
    running = list(ctx)
    for _ in range(steps):
        if len(running) > model.max_context:
            raise ContextTooLongError(f"context grew past limit {model.max_context}")
        logits = model.next_logits(running)
        token = kernels.argmax_low(np.ascontiguousarray(logits, dtype=np.float64))
        out.append(token)
        running.append(token)
        if model.eos_id is not None and token == model.eos_id:
            break
    return out


def score_sequence(model, tokens: Sequence[int]) -> np.ndarray:
    """Per-position log-probs ``log p(x_j | x_<j)``; position 0 is scored
    against the empty context."""
    if len(tokens) < 1:
        raise ValueError("score_sequence needs at least one token")
    _validate_ctx(model, tokens)
    out = np.empty(len(tokens), dtype=np.float64)
    for j in range(len(tokens)):
        logits = np.ascontiguousarray(model.next_logits(tokens[:j]), dtype=np.float64)
        out[j] = kernels.log_softmax(logits)[tokens[j]]
    return np.minimum(out, 0.0)
