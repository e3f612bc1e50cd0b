"""Pure-numpy decode-step kernels.

These are the reference implementations; ``_core.pyx`` mirrors them in
Cython. Argmax and top-k decisions are bit-identical across the two
backends because both are computed on the same adjusted logit values
(probabilities may differ in the last ulp due to summation order).

All functions expect 1-D float64 logit arrays and unique int64 index
arrays; the callers in :mod:`guided_decode.decoder` and
:mod:`guided_decode.models` take care of coercion.
"""
from __future__ import annotations

import numpy as np


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exps = np.exp(shifted)
    return exps / exps.sum()


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def argmax_low(values: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest index on ties.
    return int(np.argmax(values))


def topk_low(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest values, ties broken toward lower indices.

    Returned in descending-value order (ascending index within a tie).
    """
    k = min(int(k), len(values))
    order = np.argsort(-values, kind="stable")
    return order[:k].astype(np.int64)


def apply_guidance(
    base: np.ndarray,
    topic_ids: np.ndarray,
    constraint_ids: np.ndarray,
    alpha: float,
    beta: float,
) -> np.ndarray:
    """``base + alpha * ind(topic) - beta * ind(constraint)`` as a new array.

    Index arrays must not contain duplicates. Zero strengths are skipped so
    the zero-guidance path reproduces ``base`` bit-for-bit.
    """
    adjusted = base.astype(np.float64, copy=True)
    if alpha != 0.0 and len(topic_ids):
        adjusted[topic_ids] += alpha
    if beta != 0.0 and len(constraint_ids):
        adjusted[constraint_ids] -= beta
    return adjusted


def guided_step(
    base: np.ndarray,
    topic_ids: np.ndarray,
    constraint_ids: np.ndarray,
    alpha: float,
    beta: float,
) -> tuple[np.ndarray, int]:
    """One guided decode step: adjusted softmax plus greedy token choice."""
    adjusted = apply_guidance(base, topic_ids, constraint_ids, alpha, beta)
    return softmax(adjusted), argmax_low(adjusted)
