"""Guidance distillation via prefix tuning.

A small set of prefix weights (a trainable token embedding plus an MLP
projecting to per-layer key/value activations) is optimized to make the
frozen base model emit guidance text when conditioned on a full
natural-language instruction. Only the projected activations are
persisted; the base model's parameters never change.
"""
from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import torch
from torch import nn

from .modeling import LoadedModel

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

DEFAULT_PREFIX_LEN = 10
DEFAULT_HIDDEN = 512
DEFAULT_BATCH_SIZE = 16
DEFAULT_LR = 3e-5
DEFAULT_EPOCHS = 20


@dataclass(frozen=True)
class DistillationRecord:
    """Instruction text paired with the guidance text it should produce."""

    instruction: str
    target: str

    def __post_init__(self) -> None:
        if not self.target.strip():
            raise ValueError("distillation target must be nonempty")


class PrefixEncoder(nn.Module):
    """Trainable prefix: embedding -> MLP -> per-layer key/value states."""

    def __init__(self, config, prefix_len: int = DEFAULT_PREFIX_LEN, hidden: int = DEFAULT_HIDDEN):
        super().__init__()
        self.prefix_len = prefix_len
        self.n_layer = config.n_layer
        self.n_head = config.n_head
        self.head_dim = config.n_embd // config.n_head
        self.embedding = nn.Parameter(torch.randn(prefix_len, config.n_embd) * 0.02)
        self.mlp = nn.Sequential(
            nn.Linear(config.n_embd, hidden),
            nn.Tanh(),
            nn.Linear(hidden, config.n_layer * 2 * config.n_embd),
        )

    def activations(self) -> torch.Tensor:
        """Prefix activations shaped [n_layer, 2, n_head, prefix_len, head_dim]."""
        projected = self.mlp(self.embedding)  # [prefix_len, n_layer * 2 * n_embd]
        shaped = projected.view(self.prefix_len, self.n_layer, 2, self.n_head, self.head_dim)
        return shaped.permute(1, 2, 3, 0, 4).contiguous()

    def past_key_values(self, batch_size: int):
        acts = self.activations()
        return tuple(
            (
                acts[layer, 0].unsqueeze(0).expand(batch_size, -1, -1, -1),
                acts[layer, 1].unsqueeze(0).expand(batch_size, -1, -1, -1),
            )
            for layer in range(self.n_layer)
        )


@dataclass
class PrefixBundle:
    """Persisted prefix activations plus training metadata."""

    activations: torch.Tensor  # [n_layer, 2, n_head, prefix_len, head_dim]
    meta: dict

    @property
    def prefix_len(self) -> int:
        return self.activations.shape[3]

    def past_key_values(self, batch_size: int = 1):
        return tuple(
            (
                self.activations[layer, 0].unsqueeze(0).expand(batch_size, -1, -1, -1),
                self.activations[layer, 1].unsqueeze(0).expand(batch_size, -1, -1, -1),
            )
            for layer in range(self.activations.shape[0])
        )

    def save(self, path: str) -> None:
        torch.save(
            {"format_version": FORMAT_VERSION, "meta": self.meta, "activations": self.activations},
            path,
        )

    @classmethod
    def load(cls, path: str) -> "PrefixBundle":
        blob = torch.load(path, weights_only=False)
        version = blob.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported prefix bundle version {version!r}")
        return cls(activations=blob["activations"], meta=blob["meta"])


def _batches(items: list, size: int):
    for start in range(0, len(items), size):
        yield items[start : start + size]


def distill(
    loaded: LoadedModel,
    records: Sequence[DistillationRecord],
    prefix_len: int = DEFAULT_PREFIX_LEN,
    hidden: int = DEFAULT_HIDDEN,
    batch_size: int = DEFAULT_BATCH_SIZE,
    lr: float = DEFAULT_LR,
    epochs: int = DEFAULT_EPOCHS,
    seed: int = 0,
    polarity: str = "topic",
) -> tuple[PrefixBundle, list[float]]:
    """Optimize prefix weights on (instruction -> guidance text) pairs.

    The base model's parameters stay frozen throughout; only the prefix
    encoder trains. Returns the saved-activation bundle and the mean
    loss per epoch. Raises on a non-finite loss.
    """
    if not records:
        raise ValueError("distillation needs at least one record")
    torch.manual_seed(seed)
    model = loaded.model
    model.eval()
    for param in model.parameters():
        param.requires_grad_(False)

    encoder = PrefixEncoder(model.config, prefix_len=prefix_len, hidden=hidden)
    optimizer = torch.optim.AdamW(encoder.parameters(), lr=lr)
    pad = loaded.tokenizer.pad_id
    eos = loaded.tokenizer.eos_id

    examples = []
    budget = loaded.max_context - prefix_len - 1
    for record in records:
        instruction = loaded.tokenizer.encode(record.instruction)
        target = loaded.tokenizer.encode(record.target) + [eos]
        if len(instruction) + len(target) > budget:
            instruction = instruction[-(budget - len(target)) :]
        examples.append((instruction, target))

    epoch_losses: list[float] = []
    for _ in range(epochs):
        total, count = 0.0, 0
        for batch in _batches(examples, batch_size):
            width = max(len(i) + len(t) for i, t in batch)
            input_ids = torch.full((len(batch), width), pad, dtype=torch.long)
            labels = torch.full((len(batch), width), -100, dtype=torch.long)
            mask = torch.zeros((len(batch), prefix_len + width), dtype=torch.long)
            for row, (instruction, target) in enumerate(batch):
                seq = instruction + target
                input_ids[row, : len(seq)] = torch.tensor(seq)
                labels[row, len(instruction) : len(seq)] = torch.tensor(target)
                mask[row, : prefix_len + len(seq)] = 1
            out = model(
                input_ids=input_ids,
                attention_mask=mask,
                past_key_values=encoder.past_key_values(len(batch)),
                labels=labels,
            )
            if not torch.isfinite(out.loss):
                raise RuntimeError("distillation diverged: non-finite loss")
            optimizer.zero_grad()
            out.loss.backward()
            optimizer.step()
            total += float(out.loss)
            count += 1
        epoch_losses.append(total / count)
    log.info("distilled %s prefix over %d records, final loss %.4f", polarity, len(records), epoch_losses[-1])

    bundle = PrefixBundle(
        activations=encoder.activations().detach(),
        meta={
            "polarity": polarity,
            "prefix_len": prefix_len,
            "hidden": hidden,
            "batch_size": batch_size,
            "lr": lr,
            "epochs": epochs,
            "records": len(records),
            "seed": seed,
        },
    )
    return bundle, epoch_losses
