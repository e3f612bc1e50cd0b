"""The guided generation loop.

Each step modifies the base next-token logits with the topic and
constraint indicator vectors, ``softmax(o + alpha * o_t - beta * o_c)``,
and picks the argmax (greedy, ties toward the lowest id). Guidance
providers supply the per-step indicator sets: nothing, a constant set
(top-k or bag-of-tokens), a trie cursor, or a per-step verifier.
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import guidance as gd
from . import kernels
from . import models as model_ops
from .benchmark import InstructionInstance
from .errors import GuidanceUnavailableError, NonFiniteLogitsError
from .knowledge import EntityRef, resolve_kb

STRATEGIES = ("verifier", "topk", "textual", "oracle", "none")


@dataclass(frozen=True)
class GuidanceConfig:
    """Decoder configuration; numeric defaults follow the reference setup
    (alpha 5.0, beta 100.0, top-k 20/40, 200-token trie budget, 8-token
    look-ahead, 64-token generations)."""

    strategy: str = "textual"
    alpha: float = 5.0
    beta: float = 100.0
    max_tokens: int = 64
    stop_at_eos: bool = True
    k_topic: int = gd.DEFAULT_K_TOPIC
    k_constraint: int = gd.DEFAULT_K_CONSTRAINT
    trie_enabled: bool = True
    trie_budget: int = gd.DEFAULT_TRIE_BUDGET
    top_p: float = gd.DEFAULT_TOP_P
    beams: int = gd.DEFAULT_BEAMS
    lookahead: int = gd.DEFAULT_LOOKAHEAD
    verifier_topic: bool = False
    topk_fallback: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r} (expected one of {STRATEGIES})")
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "alpha": self.alpha,
            "beta": self.beta,
            "max_tokens": self.max_tokens,
            "stop_at_eos": self.stop_at_eos,
            "k_topic": self.k_topic,
            "k_constraint": self.k_constraint,
            "trie_enabled": self.trie_enabled,
            "trie_budget": self.trie_budget,
            "top_p": self.top_p,
            "beams": self.beams,
            "lookahead": self.lookahead,
            "verifier_topic": self.verifier_topic,
            "topk_fallback": self.topk_fallback,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class StepTrace:
    chosen: int
    base_argmax: int
    topic_size: int
    constraint_size: int
    topic_reset: bool
    constraint_reset: bool


@dataclass
class DecodeTrace:
    strategy: str
    steps: list[StepTrace] = field(default_factory=list)
    fallbacks: list[str] = field(default_factory=list)

    @property
    def topic_resets(self) -> int:
        return sum(s.topic_reset for s in self.steps)

    @property
    def constraint_resets(self) -> int:
        return sum(s.constraint_reset for s in self.steps)

    def summary(self) -> dict:
        return {
            "strategy": self.strategy,
            "steps": len(self.steps),
            "topic_resets": self.topic_resets,
            "constraint_resets": self.constraint_resets,
            "guided_steps": sum(1 for s in self.steps if s.topic_size or s.constraint_size),
            "fallbacks": list(self.fallbacks),
        }


@dataclass(frozen=True)
class GenerationResult:
    text: str
    token_ids: tuple[int, ...]
    trace: DecodeTrace


def guided_step(
    base: np.ndarray,
    topic: gd.GuidanceStep,
    constraint: gd.GuidanceStep,
    config: GuidanceConfig,
) -> tuple[np.ndarray, int]:
    """Apply guidance to one logit vector; returns (probabilities, token).

    The chosen token is the argmax of the adjusted logits (identical to
    the argmax of the returned distribution), ties toward the lowest id.
    """
    base = np.ascontiguousarray(base, dtype=np.float64)
    if not np.isfinite(base).all():
        raise NonFiniteLogitsError("base logits contain NaN or infinity")
    size = len(base)
    for step in (topic, constraint):
        for token_id in step.token_ids:
            if not 0 <= token_id < size:
                raise ValueError(f"guidance id {token_id} outside vocabulary of size {size}")
    topic_ids = np.fromiter(sorted(topic.token_ids), dtype=np.int64, count=len(topic.token_ids))
    constraint_ids = np.fromiter(sorted(constraint.token_ids), dtype=np.int64, count=len(constraint.token_ids))
    probs, chosen = kernels.guided_step(base, topic_ids, constraint_ids, config.alpha, config.beta)
    return probs, int(chosen)


class _Provider:
    """Produces one GuidanceStep per decoding step."""

    polarity: str

    def step(self, ctx: Sequence[int], last_token: int | None) -> gd.GuidanceStep:
        raise NotImplementedError


class _NoGuidance(_Provider):
    def __init__(self, polarity: str):
        self.polarity = polarity
        self._step = gd.GuidanceStep.empty(polarity)

    def step(self, ctx, last_token):
        return self._step


class _Constant(_Provider):
    def __init__(self, ids: frozenset[int], polarity: str):
        self.polarity = polarity
        self._step = gd.GuidanceStep(ids, polarity)

    def step(self, ctx, last_token):
        return self._step


class _TrieProvider(_Provider):
    def __init__(self, trie: gd.GuidanceTrie, polarity: str):
        self.polarity = polarity
        self.cursor = gd.TrieCursor(trie, polarity)
        self._resets_before = 0

    def step(self, ctx, last_token):
        self._resets_before = self.cursor.resets
        return self.cursor.step(last_token)

    @property
    def reset_in_last_step(self) -> bool:
        return self.cursor.resets > self._resets_before


class _VerifierProvider(_Provider):
    def __init__(self, gen_model, verify_model, entity: str, polarity: str, config: GuidanceConfig):
        self.polarity = polarity
        self._gen = gen_model
        self._verify = verify_model
        self._entity = entity
        self._config = config

    def step(self, ctx, last_token):
        return gd.verifier_guidance(
            self._gen,
            ctx,
            self._entity,
            self.polarity,
            verify_model=self._verify,
            max_steps=self._config.lookahead,
        )


def _textual_provider(
    guide_model,
    entity_name: str,
    polarity: str,
    config: GuidanceConfig,
    seed_offset: int,
    trace: DecodeTrace,
    examples: list[str] | None,
) -> _Provider:
    if examples is None:
        examples = gd.generate_textual_examples(
            guide_model,
            entity_name,
            budget=config.trie_budget,
            top_p=config.top_p,
            beams=config.beams,
            seed=config.seed + seed_offset,
        )
    if not examples:
        if not config.topk_fallback:
            raise GuidanceUnavailableError(f"no textual examples for {entity_name!r} and fallback disabled")
        trace.fallbacks.append(f"{polarity}:topk")
        k = config.k_topic if polarity == gd.TOPIC else config.k_constraint
        return _Constant(gd.topk_guidance(guide_model, entity_name, k, polarity).token_ids, polarity)
    return _examples_provider(examples, guide_model, polarity, config)


def _examples_provider(examples: list[str], tokenizer_model, polarity: str, config: GuidanceConfig) -> _Provider:
    trie = gd.build_trie(examples, tokenizer_model.tokenize)
    if config.trie_enabled:
        return _TrieProvider(trie, polarity)
    return _Constant(trie.all_tokens(), polarity)


def _build_providers(
    gen_model,
    guide_model,
    topic,
    constraint,
    config: GuidanceConfig,
    kb,
    trace: DecodeTrace,
    guidance_examples: dict[str, list[str]] | None,
    names: tuple[str, str] | None = None,
) -> tuple[_Provider, _Provider]:
    if config.strategy in ("none", "oracle"):
        topic_name = constraint_name = ""
    elif names is not None:
        topic_name, constraint_name = names
    else:
        topic_name = _entity_name(topic, kb)
        constraint_name = _entity_name(constraint, kb)
    cached = guidance_examples or {}

    if config.strategy == "none":
        return _NoGuidance(gd.TOPIC), _NoGuidance(gd.CONSTRAINT)
    if config.strategy == "topk":
        return (
            _Constant(gd.topk_guidance(guide_model, topic_name, config.k_topic, gd.TOPIC).token_ids, gd.TOPIC),
            _Constant(
                gd.topk_guidance(guide_model, constraint_name, config.k_constraint, gd.CONSTRAINT).token_ids,
                gd.CONSTRAINT,
            ),
        )
    if config.strategy == "verifier":
        constraint_provider: _Provider = _VerifierProvider(
            gen_model, guide_model, constraint_name, gd.CONSTRAINT, config
        )
        if config.verifier_topic:
            return _VerifierProvider(gen_model, guide_model, topic_name, gd.TOPIC, config), constraint_provider
        return _NoGuidance(gd.TOPIC), constraint_provider
    if config.strategy == "textual":
        return (
            _textual_provider(guide_model, topic_name, gd.TOPIC, config, 0, trace, cached.get(gd.TOPIC)),
            _textual_provider(guide_model, constraint_name, gd.CONSTRAINT, config, 1, trace, cached.get(gd.CONSTRAINT)),
        )
    # oracle: tries over the knowledge base's true member surface forms
    if kb is None:
        raise GuidanceUnavailableError("oracle guidance needs a knowledge base")
    if not isinstance(topic, EntityRef) or not isinstance(constraint, EntityRef):
        raise GuidanceUnavailableError("oracle guidance needs entity references, not bare names")
    topic_kb = resolve_kb(kb, topic)
    constraint_kb = resolve_kb(kb, constraint)
    return (
        _examples_provider(gd.oracle_examples(topic_kb, topic), gen_model, gd.TOPIC, config),
        _examples_provider(gd.oracle_examples(constraint_kb, constraint), gen_model, gd.CONSTRAINT, config),
    )


def _entity_name(entity, kb) -> str:
    if isinstance(entity, EntityRef):
        if kb is None:
            raise GuidanceUnavailableError("entity references need a knowledge base to resolve names")
        return resolve_kb(kb, entity).display_name(entity)
    return str(entity)


def _strip_special(step: gd.GuidanceStep, model) -> gd.GuidanceStep:
    # eos never appears in a guidance set
    if model.eos_id is not None and model.eos_id in step.token_ids:
        return gd.GuidanceStep(step.token_ids - {model.eos_id}, step.polarity)
    return step


def generate(
    gen_model,
    instance: InstructionInstance | None = None,
    *,
    prompt: str | None = None,
    topic=None,
    constraint=None,
    guide_model=None,
    kb=None,
    config: GuidanceConfig | None = None,
    guidance_examples: dict[str, list[str]] | None = None,
) -> GenerationResult:
    """Guided generation for an instance or explicit control codes.

    With ``instance``, the prompt is its rendered instruction and the
    topic/constraint entities come from the instance. In control-code
    mode, pass ``topic`` and ``constraint`` (entity names, or
    ``EntityRef`` plus ``kb``) and optionally a ``prompt``.
    ``guidance_examples`` short-circuits textual example generation with
    cached phrase lists keyed by polarity.
    """
    config = config or GuidanceConfig()
    guide_model = guide_model or gen_model
    names: tuple[str, str] | None = None
    if instance is not None:
        prompt = instance.rendered if prompt is None else prompt
        if prompt is None:
            raise ValueError(f"instance {instance.instance_id} is not rendered and no prompt was given")
        topic = instance.topic
        constraint = instance.constraint
        names = (instance.topic_name, instance.constraint_name)
    elif topic is None or constraint is None:
        raise ValueError("control-code mode needs both topic and constraint")
    prompt = prompt or ""

    trace = DecodeTrace(strategy=config.strategy)
    topic_provider, constraint_provider = _build_providers(
        gen_model, guide_model, topic, constraint, config, kb, trace, guidance_examples, names
    )

    ctx = list(gen_model.tokenize(prompt))
    emitted: list[int] = []
    for _ in range(config.max_tokens):
        base = model_ops.next_logits(gen_model, ctx)
        last = emitted[-1] if emitted else None
        topic_step = _strip_special(topic_provider.step(ctx, last), gen_model)
        constraint_step = _strip_special(constraint_provider.step(ctx, last), gen_model)
        probs, chosen = guided_step(base, topic_step, constraint_step, config)
        if (
            config.stop_at_eos
            and gen_model.eos_id is not None
            and chosen == gen_model.eos_id
        ):
            break
        base_argmax = kernels.argmax_low(np.ascontiguousarray(base, dtype=np.float64))
        emitted.append(chosen)
        ctx.append(chosen)
        trace.steps.append(
            StepTrace(
                chosen=chosen,
                base_argmax=int(base_argmax),
                topic_size=len(topic_step.token_ids),
                constraint_size=len(constraint_step.token_ids),
                topic_reset=getattr(topic_provider, "reset_in_last_step", False),
                constraint_reset=getattr(constraint_provider, "reset_in_last_step", False),
            )
        )
    return GenerationResult(
        text=gen_model.detokenize(emitted),
        token_ids=tuple(emitted),
        trace=trace,
    )
