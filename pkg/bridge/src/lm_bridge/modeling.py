"""Model loading, tiny-model pretraining, and generation/scoring utilities.

A served model is a directory holding a Hugging Face causal LM (GPT-2
architecture) plus a ``vocab.txt`` word-level vocabulary. ``build_tiny``
pretrains a small model from scratch on a text corpus so the whole
stack runs offline on a laptop; the same code serves any larger GPT-2
checkpoint paired with a vocabulary file.
"""
from __future__ import annotations

import os
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import torch
from transformers import GPT2Config, GPT2LMHeadModel

from .tokenizer import WordTokenizer

VOCAB_FILE = "vocab.txt"


@dataclass
class LoadedModel:
    model: GPT2LMHeadModel
    tokenizer: WordTokenizer
    max_context: int

    @property
    def bos_id(self) -> int:
        # eos doubles as bos, GPT-2 style
        return self.tokenizer.eos_id


def load_model(path: str) -> LoadedModel:
    model = GPT2LMHeadModel.from_pretrained(path)
    model.eval()
    tokenizer = WordTokenizer.load(os.path.join(path, VOCAB_FILE))
    return LoadedModel(model, tokenizer, max_context=model.config.n_positions)


def build_tiny(
    corpus_lines: Sequence[str],
    out_dir: str,
    n_embd: int = 64,
    n_layer: int = 2,
    n_head: int = 2,
    n_positions: int = 256,
    steps: int = 300,
    batch_size: int = 8,
    lr: float = 1e-3,
    seed: int = 0,
) -> LoadedModel:
    """Pretrain a small GPT-2 on ``corpus_lines`` and save it to ``out_dir``."""
    torch.manual_seed(seed)
    words = sorted({w for line in corpus_lines for w in line.split()})
    tokenizer = WordTokenizer.build(words)
    config = GPT2Config(
        vocab_size=tokenizer.vocab_size,
        n_positions=n_positions,
        n_embd=n_embd,
        n_layer=n_layer,
        n_head=n_head,
        bos_token_id=tokenizer.eos_id,
        eos_token_id=tokenizer.eos_id,
    )
    model = GPT2LMHeadModel(config)
    model.train()
    sequences = [
        [tokenizer.eos_id] + tokenizer.encode(line)[: n_positions - 2] + [tokenizer.eos_id]
        for line in corpus_lines
        if line.strip()
    ]
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    pad = tokenizer.pad_id
    for _ in range(steps):
        batch = [sequences[int(i)] for i in rng.integers(0, len(sequences), size=batch_size)]
        width = max(len(s) for s in batch)
        input_ids = torch.full((len(batch), width), pad, dtype=torch.long)
        labels = torch.full((len(batch), width), -100, dtype=torch.long)
        mask = torch.zeros((len(batch), width), dtype=torch.long)
        for row, seq in enumerate(batch):
            input_ids[row, : len(seq)] = torch.tensor(seq)
            labels[row, : len(seq)] = torch.tensor(seq)
            mask[row, : len(seq)] = 1
        loss = model(input_ids=input_ids, attention_mask=mask, labels=labels).loss
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    model.eval()
    os.makedirs(out_dir, exist_ok=True)
    model.save_pretrained(out_dir)
    tokenizer.save(os.path.join(out_dir, VOCAB_FILE))
    return LoadedModel(model, tokenizer, max_context=n_positions)


def _context_tensor(loaded: LoadedModel, ids: Sequence[int]) -> torch.Tensor:
    ctx = list(ids) if ids else [loaded.bos_id]
    return torch.tensor([ctx], dtype=torch.long)


@torch.no_grad()
def next_logits(loaded: LoadedModel, ids: Sequence[int]) -> np.ndarray:
    """Next-token logits after ``ids`` (the empty context scores from bos)."""
    out = loaded.model(input_ids=_context_tensor(loaded, ids))
    return out.logits[0, -1].numpy().astype(np.float64)


def _argmax_low(values: np.ndarray) -> int:
    return int(np.argmax(values))


@torch.no_grad()
def generate(
    loaded: LoadedModel,
    ids: Sequence[int],
    max_tokens: int,
    mode: str = "greedy",
    p: float | None = None,
    temperature: float | None = None,
    seed: int | None = None,
    past_key_values=None,
    stop_at_eos: bool = True,
) -> list[int]:
    """Continue ``ids`` by up to ``max_tokens`` tokens.

    Greedy mode is deterministic (ties toward the lowest id); top-p mode
    draws from the renormalized nucleus using ``seed``.
    """
    if mode not in ("greedy", "top_p"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    running = list(ids) if ids else [loaded.bos_id]
    context = torch.tensor([running], dtype=torch.long)
    past = past_key_values
    prefix_len = past[0][0].shape[2] if past is not None else 0
    mask = torch.ones((1, prefix_len + context.shape[1]), dtype=torch.long)
    out: list[int] = []
    for _ in range(max_tokens):
        result = loaded.model(input_ids=context, attention_mask=mask, past_key_values=past, use_cache=True)
        past = result.past_key_values
        logits = result.logits[0, -1].numpy().astype(np.float64)
        if mode == "greedy":
            token = _argmax_low(logits)
        else:
            if temperature:
                logits = logits / temperature
            shifted = logits - logits.max()
            probs = np.exp(shifted)
            probs /= probs.sum()
            order = np.argsort(-probs, kind="stable")
            cumulative = np.cumsum(probs[order])
            cutoff = int(np.searchsorted(cumulative, p if p is not None else 0.95)) + 1
            keep = order[:cutoff]
            kept = probs[keep] / probs[keep].sum()
            token = int(keep[int(rng.choice(len(keep), p=kept))])
        out.append(token)
        if stop_at_eos and token == loaded.tokenizer.eos_id:
            break
        context = torch.tensor([[token]], dtype=torch.long)
        mask = torch.cat([mask, torch.ones((1, 1), dtype=torch.long)], dim=1)
    return out


@torch.no_grad()
def score(loaded: LoadedModel, ids: Sequence[int]) -> list[float]:
    """Per-position log-probs; position 0 is scored against bos."""
    if not ids:
        raise ValueError("score needs at least one token")
    full = torch.tensor([[loaded.bos_id] + list(ids)], dtype=torch.long)
    logits = loaded.model(input_ids=full).logits[0]
    log_probs = torch.log_softmax(logits[:-1].double(), dim=-1)
    targets = full[0, 1:]
    return [float(log_probs[j, targets[j]]) for j in range(len(ids))]


def param_checksum(model: torch.nn.Module) -> str:
    import hashlib

    digest = hashlib.sha256()
    for name, param in sorted(model.named_parameters()):
        digest.update(name.encode())
        digest.update(param.detach().cpu().numpy().tobytes())
    return digest.hexdigest()
