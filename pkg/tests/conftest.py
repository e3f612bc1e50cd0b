from __future__ import annotations

import pytest

from guided_decode._data import data_path
from guided_decode.knowledge import HierarchyKB, PropertyKB
from guided_decode.models import TableModel, Vocabulary


@pytest.fixture(scope="session")
def hierarchy_kb() -> HierarchyKB:
    return HierarchyKB.load(data_path("hierarchy.kb"))


@pytest.fixture(scope="session")
def property_kb() -> PropertyKB:
    return PropertyKB.load(data_path("properties.kb"))


@pytest.fixture()
def abcd_vocab() -> Vocabulary:
    return Vocabulary.with_specials(["a", "b", "c", "d"])


@pytest.fixture()
def chain_model(abcd_vocab) -> TableModel:
    """Deterministic chain a -> b -> c -> d -> eos."""
    return TableModel(
        abcd_vocab,
        rules={
            ("a",): {"b": 1.0},
            ("b",): {"c": 1.0},
            ("c",): {"d": 1.0},
            ("d",): {"<eos>": 1.0},
        },
        default={"a": 1.0},
    )


@pytest.fixture()
def uniform_model(abcd_vocab) -> TableModel:
    """Uniform over the four content tokens (specials excluded)."""
    return TableModel(abcd_vocab, default={"a": 0.25, "b": 0.25, "c": 0.25, "d": 0.25})


@pytest.fixture(scope="session")
def oracle_world(hierarchy_kb):
    from worlds import build_oracle_world

    return build_oracle_world(hierarchy_kb, count=240, seed=20240501)
