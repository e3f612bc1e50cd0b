"""Knowledge bases and the topic / violation checkers.

Two knowledge bases back the benchmark: a hypernym hierarchy (forest of
named nodes whose leaves carry a one-sentence description) and a
property store mapping (property, value) pairs to sets of person names.
Both expose ``members(ref)``: the surface strings whose mention in a
generation decides the checkers.

Checker sign convention: ``violates(kb, x, c) is True`` means a
forbidden surface form appears in ``x`` (bad); conformance is the
negation. Instruction conformance counts ``on_topic and not violates``.
"""
from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

from .errors import KBFormatError, UnknownEntityError

HIERARCHY_NODE = "hierarchy-node"
PROPERTY_VALUE_PAIR = "property-value-pair"

PROPERTY_NAMES = ("occupation", "citizenship", "education", "birthplace", "deathplace")

# Surface phrases for (property, value) pairs, mirroring how the pairs are
# verbalized in instructions ("people who are citizens of United Kingdom").
_PROPERTY_PHRASES = {
    "occupation": "{value}",
    "citizenship": "people who are citizens of {value}",
    "education": "people who were educated at {value}",
    "birthplace": "people who were born in {value}",
    "deathplace": "people who died in {value}",
}


@dataclass(frozen=True)
class EntityRef:
    """Reference to a hierarchy node or a (property, value) pair."""

    kind: str
    ident: str | tuple[str, str]

    def __post_init__(self) -> None:
        if self.kind not in (HIERARCHY_NODE, PROPERTY_VALUE_PAIR):
            raise UnknownEntityError(f"unknown entity kind {self.kind!r}")
        if self.kind == PROPERTY_VALUE_PAIR and not (
            isinstance(self.ident, tuple) and len(self.ident) == 2
        ):
            raise UnknownEntityError(f"property reference needs a (property, value) pair, got {self.ident!r}")

    @classmethod
    def node(cls, node_id: str) -> "EntityRef":
        return cls(HIERARCHY_NODE, node_id)

    @classmethod
    def pair(cls, prop: str, value: str) -> "EntityRef":
        return cls(PROPERTY_VALUE_PAIR, (prop, value))


def normalize(text: str) -> str:
    """Lowercase and collapse all whitespace runs to single spaces."""
    return " ".join(text.lower().split())


def mention_match(surface: str, text: str) -> bool:
    """Whether ``surface`` occurs in ``text`` at word boundaries.

    Both sides are normalized (case, whitespace); a match must not be
    flanked by alphanumeric characters, so "car" does not fire inside
    "oscar".
    """
    if not surface:
        raise ValueError("surface string must be nonempty")
    needle = normalize(surface)
    haystack = normalize(text)
    if not needle:
        return False
    start = 0
    while True:
        pos = haystack.find(needle, start)
        if pos < 0:
            return False
        before_ok = pos == 0 or not haystack[pos - 1].isalnum()
        end = pos + len(needle)
        after_ok = end == len(haystack) or not haystack[end].isalnum()
        if before_ok and after_ok:
            return True
        start = pos + 1


class HierarchyKB:
    """Forest of hypernym links; leaves carry first-sentence descriptions."""

    kind = "hierarchy"

    def __init__(self, names: dict[str, str], parents: dict[str, str | None], leaf_text: dict[str, str]):
        self._names = dict(names)
        self._parents = dict(parents)
        self._leaf_text = dict(leaf_text)
        self._children: dict[str, list[str]] = {node: [] for node in self._names}
        for node, parent in self._parents.items():
            if parent is not None:
                self._children[parent].append(node)
        self._leaf_cache: dict[str, frozenset[str]] = {}
        self.validate()

    def validate(self) -> None:
        for node, parent in self._parents.items():
            if node not in self._names:
                raise KBFormatError(f"parent entry for undeclared node {node!r}")
            if parent is not None and parent not in self._names:
                raise KBFormatError(f"node {node!r} has undeclared parent {parent!r}")
        for node in self._names:
            seen = {node}
            cursor = self._parents.get(node)
            while cursor is not None:
                if cursor in seen:
                    raise KBFormatError(f"cycle through node {cursor!r}")
                seen.add(cursor)
                cursor = self._parents.get(cursor)
        for leaf in self.leaf_ids():
            text = self._leaf_text.get(leaf, "")
            if not text.strip():
                raise KBFormatError(f"leaf {leaf!r} ({self._names[leaf]!r}) has no description text")

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._names

    def __len__(self) -> int:
        return len(self._names)

    def node_ids(self) -> list[str]:
        return sorted(self._names)

    def name(self, node_id: str) -> str:
        self._require(node_id)
        return self._names[node_id]

    def parent(self, node_id: str) -> str | None:
        self._require(node_id)
        return self._parents[node_id]

    def children(self, node_id: str) -> list[str]:
        self._require(node_id)
        return sorted(self._children[node_id])

    def roots(self) -> list[str]:
        return sorted(n for n, p in self._parents.items() if p is None)

    def root_of(self, node_id: str) -> str:
        cursor = node_id
        self._require(cursor)
        while self._parents[cursor] is not None:
            cursor = self._parents[cursor]  # type: ignore[assignment]
        return cursor

    def is_leaf(self, node_id: str) -> bool:
        self._require(node_id)
        return not self._children[node_id]

    def leaf_ids(self, node_id: str | None = None) -> list[str]:
        if node_id is None:
            return sorted(n for n in self._names if not self._children[n])
        self._require(node_id)
        out = []
        stack = [node_id]
        while stack:
            node = stack.pop()
            kids = self._children[node]
            if kids:
                stack.extend(kids)
            else:
                out.append(node)
        return sorted(out)

    def leaf_text(self, leaf_id: str) -> str:
        self._require(leaf_id)
        return self._leaf_text[leaf_id]

    def descendants(self, node_id: str) -> list[str]:
        """Strict descendants of ``node_id`` (internal nodes and leaves)."""
        self._require(node_id)
        out = []
        stack = list(self._children[node_id])
        while stack:
            node = stack.pop()
            out.append(node)
            stack.extend(self._children[node])
        return sorted(out)

    def is_ancestor(self, ancestor: str, node_id: str) -> bool:
        """Strict ancestry: a node is not its own ancestor."""
        self._require(ancestor)
        cursor = self._parents.get(node_id)
        while cursor is not None:
            if cursor == ancestor:
                return True
            cursor = self._parents.get(cursor)
        return False

    def leafs(self, ref: EntityRef | str) -> frozenset[str]:
        """Leaf names in the subtree at ``ref``; a leaf returns itself."""
        node_id = ref.ident if isinstance(ref, EntityRef) else ref
        assert isinstance(node_id, str)
        self._require(node_id)
        cached = self._leaf_cache.get(node_id)
        if cached is None:
            cached = frozenset(self._names[leaf] for leaf in self.leaf_ids(node_id))
            self._leaf_cache[node_id] = cached
        return cached

    def members(self, ref: EntityRef) -> frozenset[str]:
        if ref.kind != HIERARCHY_NODE:
            raise UnknownEntityError(f"{ref.kind} reference does not resolve against the hierarchy KB")
        return self.leafs(ref)

    def display_name(self, ref: EntityRef) -> str:
        if ref.kind != HIERARCHY_NODE:
            raise UnknownEntityError(f"{ref.kind} reference does not resolve against the hierarchy KB")
        assert isinstance(ref.ident, str)
        return self.name(ref.ident)

    def _require(self, node_id: str) -> None:
        if node_id not in self._names:
            raise UnknownEntityError(f"unknown hierarchy node {node_id!r}")

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for node_id in sorted(self._names):
                parent = self._parents[node_id] or "ROOT"
                fh.write(f"NODE {node_id} {parent} {self._names[node_id]}\n")
            for leaf_id in self.leaf_ids():
                fh.write(f"TEXT {leaf_id} {self._leaf_text[leaf_id]}\n")

    @classmethod
    def load(cls, path: str) -> "HierarchyKB":
        names: dict[str, str] = {}
        parents: dict[str, str | None] = {}
        leaf_text: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                keyword, _, rest = line.partition(" ")
                if keyword == "NODE":
                    fields = rest.split(" ", 2)
                    if len(fields) != 3:
                        raise KBFormatError(f"{path}:{lineno}: NODE needs '<id> <parent|ROOT> <name>'")
                    node_id, parent, name = fields
                    names[node_id] = name
                    parents[node_id] = None if parent == "ROOT" else parent
                elif keyword == "TEXT":
                    node_id, sep, text = rest.partition(" ")
                    if not sep:
                        raise KBFormatError(f"{path}:{lineno}: TEXT needs '<leaf-id> <sentence>'")
                    leaf_text[node_id] = text.strip()
                else:
                    raise KBFormatError(f"{path}:{lineno}: unknown keyword {keyword!r}")
        return cls(names, parents, leaf_text)


class PropertyKB:
    """(property, value) pairs, each holding a set of person names."""

    kind = "property"

    MIN_NAMES_PER_PAIR = 4

    def __init__(self, value_sets: dict[tuple[str, str], Sequence[str]], person_text: dict[str, str]):
        self._value_sets = {pair: tuple(names) for pair, names in value_sets.items()}
        self._person_text = dict(person_text)
        self.validate()

    def validate(self) -> None:
        for (prop, value), names in self._value_sets.items():
            if prop not in PROPERTY_NAMES:
                raise KBFormatError(f"unknown property {prop!r} (expected one of {PROPERTY_NAMES})")
            if not value.strip():
                raise KBFormatError(f"empty value for property {prop!r}")
            if len(set(names)) < self.MIN_NAMES_PER_PAIR:
                raise KBFormatError(
                    f"pair ({prop!r}, {value!r}) has {len(set(names))} names, needs >= {self.MIN_NAMES_PER_PAIR}"
                )
            for name in names:
                if not name.strip():
                    raise KBFormatError(f"empty person name under ({prop!r}, {value!r})")
                text = self._person_text.get(name, "")
                if not text.strip():
                    raise KBFormatError(f"person {name!r} has no description text")
                # first-sentence style: the description opens with the name,
                # which is also how TEXT lines are keyed on disk
                if not text.startswith(name):
                    raise KBFormatError(f"description for {name!r} must start with the name")

    @property
    def properties(self) -> tuple[str, ...]:
        return tuple(sorted({prop for prop, _ in self._value_sets}))

    def pairs(self) -> list[tuple[str, str]]:
        return sorted(self._value_sets)

    def names(self, pair: tuple[str, str]) -> tuple[str, ...]:
        self._require(pair)
        return self._value_sets[pair]

    def person_text(self, name: str) -> str:
        if name not in self._person_text:
            raise UnknownEntityError(f"unknown person {name!r}")
        return self._person_text[name]

    def members(self, ref: EntityRef) -> frozenset[str]:
        if ref.kind != PROPERTY_VALUE_PAIR:
            raise UnknownEntityError(f"{ref.kind} reference does not resolve against the property KB")
        assert isinstance(ref.ident, tuple)
        self._require(ref.ident)
        return frozenset(self._value_sets[ref.ident])

    def display_name(self, ref: EntityRef) -> str:
        if ref.kind != PROPERTY_VALUE_PAIR:
            raise UnknownEntityError(f"{ref.kind} reference does not resolve against the property KB")
        assert isinstance(ref.ident, tuple)
        self._require(ref.ident)
        prop, value = ref.ident
        return _PROPERTY_PHRASES[prop].format(value=value)

    def _require(self, pair: tuple[str, str]) -> None:
        if pair not in self._value_sets:
            raise UnknownEntityError(f"unknown (property, value) pair {pair!r}")

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            written: set[str] = set()
            for prop, value in sorted(self._value_sets):
                fh.write(f"PAIR {prop} {value}\n")
                for name in self._value_sets[(prop, value)]:
                    fh.write(f"NAME {name}\n")
                    if name not in written:
                        fh.write(f"TEXT {self._person_text[name]}\n")
                        written.add(name)

    @classmethod
    def load(cls, path: str) -> "PropertyKB":
        value_sets: dict[tuple[str, str], list[str]] = {}
        person_text: dict[str, str] = {}
        declared: list[str] = []
        current: tuple[str, str] | None = None
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                keyword, _, rest = line.partition(" ")
                if keyword == "PAIR":
                    prop, sep, value = rest.partition(" ")
                    if not sep:
                        raise KBFormatError(f"{path}:{lineno}: PAIR needs '<property> <value>'")
                    current = (prop, value.strip())
                    value_sets.setdefault(current, [])
                elif keyword == "NAME":
                    if current is None:
                        raise KBFormatError(f"{path}:{lineno}: NAME before any PAIR")
                    name = rest.strip()
                    value_sets[current].append(name)
                    declared.append(name)
                elif keyword == "TEXT":
                    # The first sentence opens with the person's name; the
                    # longest declared name prefixing the line is the key.
                    match = ""
                    for name in declared:
                        if rest.startswith(name + " ") and len(name) > len(match):
                            match = name
                    if not match:
                        raise KBFormatError(f"{path}:{lineno}: TEXT does not start with a declared NAME")
                    person_text[match] = rest.strip()
                else:
                    raise KBFormatError(f"{path}:{lineno}: unknown keyword {keyword!r}")
        return cls(value_sets, person_text)


KnowledgeBase = HierarchyKB | PropertyKB


def violates(kb: KnowledgeBase, text: str, constraint: EntityRef) -> bool:
    """True iff any member surface form of ``constraint`` is mentioned."""
    return any(mention_match(surface, text) for surface in sorted(kb.members(constraint)))


def on_topic(kb: KnowledgeBase, text: str, topic: EntityRef) -> bool:
    """True iff some member surface form of ``topic`` is mentioned."""
    if not text:
        return False
    return any(mention_match(surface, text) for surface in sorted(kb.members(topic)))


def resolve_kb(kbs: KnowledgeBase | dict[str, KnowledgeBase] | Iterable[KnowledgeBase], ref: EntityRef) -> KnowledgeBase:
    """Pick the knowledge base a reference resolves against."""
    wanted = "hierarchy" if ref.kind == HIERARCHY_NODE else "property"
    if isinstance(kbs, (HierarchyKB, PropertyKB)):
        candidates: Iterable[KnowledgeBase] = [kbs]
    elif isinstance(kbs, dict):
        candidates = kbs.values()
    else:
        candidates = kbs
    for kb in candidates:
        if kb.kind == wanted:
            return kb
    raise UnknownEntityError(f"no {wanted} knowledge base available for {ref}")
