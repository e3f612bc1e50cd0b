"""Deterministic world for the oracle-ablation experiment.

Builds, from the fixture hierarchy KB, a scripted TableModel whose
unguided greedy decode echoes a member of each instance's constraint
(a "tempting" model), together with rendered instances and a shared
vocabulary. Under oracle trie guidance the same model lists allowed
topic members instead; under bag-of-tokens guidance it emits scattered
name fragments that never form a full surface form.

The construction leans on naming discipline in the fixture KB (leaf
names are 1-2 words; no word is both name-initial and name-final; each
initial word has a unique lexicographically-least completion), which
``leaf_word_roles`` asserts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from guided_decode.benchmark import (
    InstructionInstance,
    load_templates,
    render_instance,
    sample_hierarchy_instance,
)
from guided_decode.knowledge import HierarchyKB
from guided_decode.models import TableModel, Vocabulary

ECHO_P = 0.55   # unguided prob of starting the constraint echo
CHAIN_P = 0.6   # prob of continuing a started name
COMMA_P = 0.9   # prob of a comma after finishing a name


@dataclass
class OracleWorld:
    vocab: Vocabulary
    model: TableModel
    instances: list[InstructionInstance]
    kb: HierarchyKB
    config_text: str


def leaf_word_roles(kb: HierarchyKB) -> tuple[set[str], set[str], set[str]]:
    """(name-initial words, name-final words, single-word names)."""
    firsts: set[str] = set()
    finals: set[str] = set()
    singles: set[str] = set()
    for leaf in kb.leaf_ids():
        words = kb.name(leaf).split()
        assert len(words) <= 2, f"experiment assumes 1-2 word leaf names, got {words}"
        if len(words) == 1:
            singles.add(words[0])
        else:
            firsts.add(words[0])
            finals.add(words[1])
    assert not firsts & (finals | singles), "a word is both name-initial and name-final"
    return firsts, finals, singles


def build_oracle_world(kb: HierarchyKB, count: int = 240, seed: int = 20240501) -> OracleWorld:
    template = load_templates()[0]  # begin+end: prompt ends "...examples of <constraint>."
    rng = np.random.default_rng(seed)
    instances = [
        render_instance(sample_hierarchy_instance(kb, rng, instance_id=f"exp-{i:04d}"), template)
        for i in range(count)
    ]

    firsts, finals, singles = leaf_word_roles(kb)
    chain: dict[str, str] = {}
    for leaf in kb.leaf_ids():
        words = kb.name(leaf).split()
        if len(words) == 2 and (words[0] not in chain or words[1] < chain[words[0]]):
            chain[words[0]] = words[1]

    # id order matters for argmax ties: multi-word finals first so that
    # constant-bag guidance never lands on a single-word leaf name
    ordered = sorted(finals) + [","] + sorted(firsts) + sorted(singles)
    known = set(ordered)
    prompt_tokens = sorted({tok for inst in instances for tok in inst.rendered.split() if tok not in known})
    vocab = Vocabulary.with_specials(ordered + prompt_tokens)

    weights = {w: 1.0 for w in firsts}
    weights.update({w: 3.0 for w in finals | singles})
    total_weight = sum(weights.values())

    def mix(mass: float, preferred: dict[str, float] | None = None) -> dict[str, float]:
        dist = {w: mass * weight / total_weight for w, weight in weights.items()}
        for token, prob in (preferred or {}).items():
            dist[token] = dist.get(token, 0.0) + prob
        return dist

    rules: dict[tuple[str, ...], dict[str, float]] = {}
    for inst in instances:
        tail = tuple(inst.rendered.split()[-2:])
        echo_leaf = sorted(kb.leafs(inst.constraint.ident))[0]
        parts = echo_leaf.split()
        rules[tail] = mix(1 - ECHO_P, {parts[0]: ECHO_P})
        if len(parts) == 2:
            rules[(tail[1], parts[0])] = mix(1 - CHAIN_P, {parts[1]: CHAIN_P})
    for w1, w2 in chain.items():
        rules[(w1,)] = mix(1 - CHAIN_P, {w2: CHAIN_P})
    for w in finals | singles:
        rules[(w,)] = mix(1 - COMMA_P, {",": COMMA_P})
    rules[(",",)] = mix(1.0)

    model = TableModel(vocab, rules=rules, default=mix(1.0))
    return OracleWorld(vocab, model, instances, kb, model.to_config_text())
