"""Benchmark construction: instances, instruction templates, splits.

An instance pairs a topic entity with a constraint entity plus three
demonstration texts drawn from the topic's members; a template turns it
into a natural-language instruction. Train/dev/test splits partition the
template ids (default 3/3/29) so test-time instructions are worded in
ways never seen in training.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from . import models as model_ops
from ._data import data_text
from .errors import InsufficientDataError, KBTooSmallError
from .knowledge import (
    EntityRef,
    HierarchyKB,
    PropertyKB,
    mention_match,
)

log = logging.getLogger(__name__)

POSITION_CLASSES = ("begin+end", "begin", "end")

TOPIC_SLOT = "[topic]"
CONSTRAINT_SLOT = "[constraint]"

DEMONSTRATION_COUNT = 3

DEFAULT_TEMPLATE_PARTITION = (3, 3, 29)


@dataclass(frozen=True)
class Template:
    """Instruction template: topic and constraint pattern plus placement."""

    template_id: int
    position: str
    topic_pattern: str
    constraint_pattern: str

    def __post_init__(self) -> None:
        if self.position not in POSITION_CLASSES:
            raise ValueError(f"unknown position class {self.position!r}")
        if self.topic_pattern.count(TOPIC_SLOT) != 1 or CONSTRAINT_SLOT in self.topic_pattern:
            raise ValueError(f"template {self.template_id}: topic pattern must contain {TOPIC_SLOT} exactly once")
        if self.constraint_pattern.count(CONSTRAINT_SLOT) != 1 or TOPIC_SLOT in self.constraint_pattern:
            raise ValueError(
                f"template {self.template_id}: constraint pattern must contain {CONSTRAINT_SLOT} exactly once"
            )


@dataclass(frozen=True)
class Demonstration:
    name: str
    text: str


@dataclass(frozen=True)
class InstructionInstance:
    """One benchmark example; ``rendered`` is set once a template is applied."""

    instance_id: str
    kb_kind: str
    topic: EntityRef
    constraint: EntityRef
    topic_name: str
    constraint_name: str
    demonstrations: tuple[Demonstration, ...]
    constraint_source: str = "uniform"
    template_id: int | None = None
    rendered: str | None = None

    def to_json_dict(self) -> dict:
        def ref_dict(ref: EntityRef, name: str) -> dict:
            if isinstance(ref.ident, tuple):
                return {"kind": ref.kind, "property": ref.ident[0], "value": ref.ident[1], "name": name}
            return {"kind": ref.kind, "id": ref.ident, "name": name}

        return {
            "id": self.instance_id,
            "kb_kind": self.kb_kind,
            "topic": ref_dict(self.topic, self.topic_name),
            "constraint": ref_dict(self.constraint, self.constraint_name),
            "demonstrations": [{"name": d.name, "text": d.text} for d in self.demonstrations],
            "constraint_source": self.constraint_source,
            "template_id": self.template_id,
            "rendered": self.rendered,
        }

    @classmethod
    def from_json_dict(cls, record: dict) -> "InstructionInstance":
        def parse_ref(blob: dict) -> EntityRef:
            if "property" in blob:
                return EntityRef(blob["kind"], (blob["property"], blob["value"]))
            return EntityRef(blob["kind"], blob["id"])

        return cls(
            instance_id=record["id"],
            kb_kind=record["kb_kind"],
            topic=parse_ref(record["topic"]),
            constraint=parse_ref(record["constraint"]),
            topic_name=record["topic"]["name"],
            constraint_name=record["constraint"]["name"],
            demonstrations=tuple(Demonstration(d["name"], d["text"]) for d in record["demonstrations"]),
            constraint_source=record.get("constraint_source", "uniform"),
            template_id=record.get("template_id"),
            rendered=record.get("rendered"),
        )


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    instances: tuple[InstructionInstance, ...]
    template_ids: tuple[int, ...]


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _collapse(text: str) -> str:
    return " ".join(text.split())


def validate_instance(instance: InstructionInstance, kb: HierarchyKB | PropertyKB | None = None) -> None:
    """Raise when an instance breaks the structural invariants."""
    if len(instance.demonstrations) != DEMONSTRATION_COUNT:
        raise ValueError(f"{instance.instance_id}: needs {DEMONSTRATION_COUNT} demonstrations")
    if len({d.name for d in instance.demonstrations}) != DEMONSTRATION_COUNT:
        raise ValueError(f"{instance.instance_id}: demonstrations must come from distinct entities")
    if instance.topic == instance.constraint:
        raise ValueError(f"{instance.instance_id}: topic equals constraint")
    if isinstance(kb, HierarchyKB):
        assert isinstance(instance.topic.ident, str) and isinstance(instance.constraint.ident, str)
        if not kb.is_ancestor(instance.topic.ident, instance.constraint.ident):
            raise ValueError(f"{instance.instance_id}: topic is not a strict ancestor of the constraint")
        members = kb.members(instance.topic)
        for demo in instance.demonstrations:
            if demo.name not in members:
                raise ValueError(f"{instance.instance_id}: demonstration {demo.name!r} not under the topic")
    if isinstance(kb, PropertyKB):
        assert isinstance(instance.topic.ident, tuple) and isinstance(instance.constraint.ident, tuple)
        if instance.topic.ident[0] == instance.constraint.ident[0]:
            raise ValueError(f"{instance.instance_id}: topic and constraint share a property")
        members = kb.members(instance.topic)
        for demo in instance.demonstrations:
            if demo.name not in members:
                raise ValueError(f"{instance.instance_id}: demonstration {demo.name!r} not in the topic name set")


def _log_demo_overlap(instance: InstructionInstance, constraint_members: Iterable[str]) -> None:
    # Demonstrations sharing surface forms with the constraint are legal
    # (they are sampled under the topic) but worth a trace when debugging
    # violation rates.
    for demo in instance.demonstrations:
        for surface in constraint_members:
            if mention_match(surface, demo.text):
                log.debug(
                    "instance %s: demonstration %r mentions constraint surface %r",
                    instance.instance_id,
                    demo.name,
                    surface,
                )
                return


def _scorer_pick(scorer, prompt: str, candidates: list[tuple[str, EntityRef]], steps: int = 16):
    """Earliest candidate surface mentioned in the scorer's greedy continuation."""
    ids = scorer.tokenize(prompt)
    if len(ids) > scorer.max_context - steps:
        ids = ids[-(scorer.max_context - steps):]
    continuation = scorer.detokenize(model_ops.greedy_continue(scorer, ids, steps))
    best: tuple[int, str, EntityRef] | None = None
    for surface, ref in candidates:
        pos = _mention_position(surface, continuation)
        if pos is not None and (best is None or pos < best[0] or (pos == best[0] and surface < best[1])):
            best = (pos, surface, ref)
    return None if best is None else best[2]


def _mention_position(surface: str, text: str) -> int | None:
    from .knowledge import normalize

    needle = normalize(surface)
    haystack = normalize(text)
    start = 0
    while needle:
        pos = haystack.find(needle, start)
        if pos < 0:
            return None
        before_ok = pos == 0 or not haystack[pos - 1].isalnum()
        end = pos + len(needle)
        after_ok = end == len(haystack) or not haystack[end].isalnum()
        if before_ok and after_ok:
            return pos
        start = pos + 1
    return None


def sample_hierarchy_instance(
    kb: HierarchyKB,
    seed,
    scorer=None,
    instance_id: str | None = None,
) -> InstructionInstance:
    """Sample one hierarchy instance: internal topic, strict-descendant
    constraint, three demonstration leaves.

    When a scorer model is given, the constraint is the descendant whose
    name appears earliest in the scorer's greedy continuation of the
    demonstration texts; otherwise (or when nothing matches) a uniform
    descendant is drawn and the fallback is recorded on the instance.
    """
    rng = _as_rng(seed)
    topics = [
        node
        for node in kb.node_ids()
        if not kb.is_leaf(node) and len(kb.leaf_ids(node)) >= DEMONSTRATION_COUNT and kb.descendants(node)
    ]
    if not topics:
        raise KBTooSmallError("no internal node with >= 3 leaves and a descendant")
    topic_id = topics[int(rng.integers(len(topics)))]
    leaf_pool = kb.leaf_ids(topic_id)
    demo_ids = [leaf_pool[i] for i in rng.choice(len(leaf_pool), size=DEMONSTRATION_COUNT, replace=False)]
    demos = tuple(Demonstration(kb.name(d), _collapse(kb.leaf_text(d))) for d in demo_ids)

    descendants = kb.descendants(topic_id)
    constraint_id: str | None = None
    source = "uniform"
    if scorer is not None:
        prompt = "\n".join(f"- {d.text}" for d in demos)
        candidates = [(kb.name(d), EntityRef.node(d)) for d in descendants]
        pick = _scorer_pick(scorer, prompt, candidates)
        if pick is not None:
            assert isinstance(pick.ident, str)
            constraint_id = pick.ident
            source = "scorer"
    if constraint_id is None:
        constraint_id = descendants[int(rng.integers(len(descendants)))]

    instance = InstructionInstance(
        instance_id=instance_id or f"h-{topic_id}-{constraint_id}-{rng.integers(1 << 30)}",
        kb_kind="hierarchy",
        topic=EntityRef.node(topic_id),
        constraint=EntityRef.node(constraint_id),
        topic_name=kb.name(topic_id),
        constraint_name=kb.name(constraint_id),
        demonstrations=demos,
        constraint_source=source,
    )
    validate_instance(instance, kb)
    _log_demo_overlap(instance, kb.members(instance.constraint))
    return instance


def sample_property_instance(
    kb: PropertyKB,
    seed,
    scorer=None,
    instance_id: str | None = None,
) -> InstructionInstance:
    """Sample one property instance: (property, value) topic, three named
    demonstrations, and a cross-property constraint pair.

    With a scorer, the constraint is the cross-property pair whose name
    set best matches the scorer's greedy continuation; without one (or on
    no match) it is drawn uniformly among cross-property pairs sharing at
    least one name with the topic's set, so the constraint is tempting.
    """
    rng = _as_rng(seed)
    pairs = kb.pairs()
    if len({prop for prop, _ in pairs}) < 2:
        raise KBTooSmallError("cross-property constraints need at least two properties")

    topic_order = rng.permutation(len(pairs))
    for idx in topic_order:
        topic_pair = pairs[int(idx)]
        topic_names = kb.names(topic_pair)
        cross = [p for p in pairs if p[0] != topic_pair[0]]
        overlapping = [p for p in cross if set(kb.names(p)) & set(topic_names)]
        if not overlapping:
            continue

        name_idx = rng.choice(len(topic_names), size=DEMONSTRATION_COUNT, replace=False)
        demos = tuple(
            Demonstration(topic_names[i], _collapse(kb.person_text(topic_names[i]))) for i in name_idx
        )

        constraint_pair: tuple[str, str] | None = None
        source = "uniform"
        if scorer is not None:
            prompt = "\n".join(f"- {d.text}" for d in demos)
            continuation = scorer.detokenize(
                model_ops.greedy_continue(scorer, scorer.tokenize(prompt), 16)
            )
            scored: list[tuple[int, tuple[str, str]]] = []
            for pair in cross:
                hits = sum(1 for name in kb.names(pair) if mention_match(name, continuation))
                if hits:
                    scored.append((hits, pair))
            if scored:
                scored.sort(key=lambda item: (-item[0], item[1]))
                constraint_pair = scored[0][1]
                source = "scorer"
        if constraint_pair is None:
            constraint_pair = overlapping[int(rng.integers(len(overlapping)))]

        topic_ref = EntityRef.pair(*topic_pair)
        constraint_ref = EntityRef.pair(*constraint_pair)
        instance = InstructionInstance(
            instance_id=instance_id or f"p-{topic_pair[0]}-{constraint_pair[0]}-{rng.integers(1 << 30)}",
            kb_kind="property",
            topic=topic_ref,
            constraint=constraint_ref,
            topic_name=kb.display_name(topic_ref),
            constraint_name=kb.display_name(constraint_ref),
            demonstrations=demos,
            constraint_source=source,
        )
        validate_instance(instance, kb)
        _log_demo_overlap(instance, kb.members(constraint_ref))
        return instance
    raise KBTooSmallError("no topic pair with an overlapping cross-property constraint")


def render(instance: InstructionInstance, template: Template) -> str:
    """Deterministic instruction text for ``instance`` under ``template``."""
    topic_line = template.topic_pattern.replace(TOPIC_SLOT, instance.topic_name)
    constraint_line = template.constraint_pattern.replace(CONSTRAINT_SLOT, instance.constraint_name)
    demo_block = "\n".join(f"- {d.text}" for d in instance.demonstrations)
    if template.position == "begin+end":
        parts = [topic_line, demo_block, constraint_line]
    elif template.position == "begin":
        parts = [topic_line, constraint_line, demo_block]
    else:
        parts = [demo_block, topic_line, constraint_line]
    return "\n".join(parts)


def render_instance(instance: InstructionInstance, template: Template) -> InstructionInstance:
    return dataclasses.replace(instance, template_id=template.template_id, rendered=render(instance, template))


def _template_regex(template: Template) -> re.Pattern:
    slot = r"([^\n]+)"
    topic_line = re.escape(template.topic_pattern).replace(re.escape(TOPIC_SLOT), slot)
    constraint_line = re.escape(template.constraint_pattern).replace(re.escape(CONSTRAINT_SLOT), slot)
    demo_block = r"\n".join([r"- [^\n]*"] * DEMONSTRATION_COUNT)
    if template.position == "begin+end":
        body = rf"{topic_line}\n{demo_block}\n{constraint_line}"
    elif template.position == "begin":
        body = rf"{topic_line}\n{constraint_line}\n{demo_block}"
    else:
        body = rf"{demo_block}\n{topic_line}\n{constraint_line}"
    return re.compile(body)


def extract_entities(text: str, templates: Sequence[Template]) -> tuple[str, str] | None:
    """Invert :func:`render` against known templates.

    Returns the (topic name, constraint name) slot fillers when some
    template matches the text exactly, else ``None``. Templates whose
    position puts the topic after the constraint do not occur, so group 1
    is always the topic.
    """
    for template in templates:
        match = _template_regex(template).fullmatch(text)
        if match:
            return match.group(1), match.group(2)
    return None


def parse_templates(text: str) -> list[Template]:
    templates: list[Template] = []
    lines = [line for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]
    i = 0
    while i < len(lines):
        header = lines[i].split()
        if len(header) != 3 or header[0] != "TEMPLATE":
            raise InsufficientDataError(f"bad template header {lines[i]!r}")
        if i + 2 >= len(lines):
            raise InsufficientDataError(f"template {header[1]} is missing pattern lines")
        templates.append(
            Template(
                template_id=int(header[1]),
                position=header[2],
                topic_pattern=lines[i + 1],
                constraint_pattern=lines[i + 2],
            )
        )
        i += 3
    if len({t.template_id for t in templates}) != len(templates):
        raise InsufficientDataError("duplicate template ids")
    return templates


def load_templates(path: str | None = None) -> list[Template]:
    """Load templates from ``path``, or the packaged seed templates."""
    if path is None:
        text = data_text("templates_seed.txt")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_templates(text)


def build_splits(
    instances: Sequence[InstructionInstance],
    templates: Sequence[Template],
    sizes: tuple[int, int, int],
    seed,
    template_partition: tuple[int, int, int] = DEFAULT_TEMPLATE_PARTITION,
    fanout: int = 1,
) -> tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
    """Partition templates (default 3/3/29 by ascending id), assign disjoint
    base instances to the three splits, and render each with ``fanout``
    distinct templates from its split's share.
    """
    if fanout < 1:
        raise ValueError("fanout must be >= 1")
    ordered = sorted(templates, key=lambda t: t.template_id)
    if len(ordered) != sum(template_partition):
        raise InsufficientDataError(
            f"{len(ordered)} templates cannot be partitioned as {'/'.join(map(str, template_partition))}"
        )
    if min(template_partition) < fanout:
        raise InsufficientDataError(f"fanout {fanout} exceeds the smallest template share")
    shares = []
    start = 0
    for count in template_partition:
        shares.append(ordered[start : start + count])
        start += count

    rng = _as_rng(seed)
    base_needed = [-(-size // fanout) for size in sizes]  # ceil
    if sum(base_needed) > len(instances):
        raise InsufficientDataError(
            f"need {sum(base_needed)} base instances for sizes {sizes} at fanout {fanout}, have {len(instances)}"
        )
    order = rng.permutation(len(instances))
    cursor = 0
    splits = []
    for split_name, size, needed, share in zip(("train", "dev", "test"), sizes, base_needed, shares):
        rendered: list[InstructionInstance] = []
        for offset in range(needed):
            base = instances[int(order[cursor + offset])]
            chosen = rng.choice(len(share), size=fanout, replace=False)
            for n, t_idx in enumerate(chosen):
                template = share[int(t_idx)]
                item = dataclasses.replace(
                    base, instance_id=f"{split_name}-{len(rendered):06d}"
                )
                rendered.append(render_instance(item, template))
                if len(rendered) == size:
                    break
            if len(rendered) == size:
                break
        cursor += needed
        splits.append(
            DatasetSplit(
                name=split_name,
                instances=tuple(rendered[:size]),
                template_ids=tuple(t.template_id for t in share),
            )
        )
    partitions = [set(s.template_ids) for s in splits]
    assert not (partitions[0] & partitions[1] or partitions[0] & partitions[2] or partitions[1] & partitions[2])
    return splits[0], splits[1], splits[2]


def write_dataset(path: str, instances: Iterable[InstructionInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for instance in instances:
            fh.write(json.dumps(instance.to_json_dict(), sort_keys=True) + "\n")


def read_dataset(path: str) -> list[InstructionInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(InstructionInstance.from_json_dict(json.loads(line)))
    return out
