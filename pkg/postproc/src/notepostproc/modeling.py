"""Base model construction and the copy/denoise pretraining phase.

Published encoder-decoder weights are unreachable from this environment,
so the "pretrained base" is a small randomly initialized BART taught to
copy token sequences (with a light insertion-noise variant) before any
fine-tuning. Copying is the capability clinician-edit fine-tuning then
bends toward deletion; without it a from-scratch model cannot reproduce
unseen body text, only the edits.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass

import torch
from transformers import BartConfig, BartForConditionalGeneration

from notepostproc.tokenizer import WordTokenizer

__all__ = [
    "BaseSpec",
    "DEFAULT_BASE_SPEC",
    "build_model",
    "cosine_with_warmup",
    "pad_batch",
    "label_batch",
    "pretrain_copy",
]


@dataclass(frozen=True)
class BaseSpec:
    """Architecture and copy-pretraining budget for the substitute base.

    Phases are (steps, min_len, max_len, insertion_noise_rate): the copy
    task only generalizes past a short-sequence warmup, so lengths grow
    over phases and the final phase mixes in noisy inputs whose targets
    drop the inserted tokens.
    """

    d_model: int = 128
    layers: int = 2
    attention_heads: int = 4
    ffn_dim: int = 256
    max_positions: int = 512
    dropout: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 32
    phases: tuple[tuple[int, int, int, float], ...] = (
        (400, 3, 8, 0.0),
        (400, 3, 20, 0.0),
        (800, 8, 72, 0.3),
    )


DEFAULT_BASE_SPEC = BaseSpec()


def build_model(tokenizer: WordTokenizer, spec: BaseSpec, seed: int) -> BartForConditionalGeneration:
    torch.manual_seed(seed)
    config = BartConfig(
        vocab_size=tokenizer.vocab_size,
        d_model=spec.d_model,
        encoder_layers=spec.layers,
        decoder_layers=spec.layers,
        encoder_attention_heads=spec.attention_heads,
        decoder_attention_heads=spec.attention_heads,
        encoder_ffn_dim=spec.ffn_dim,
        decoder_ffn_dim=spec.ffn_dim,
        max_position_embeddings=spec.max_positions,
        dropout=spec.dropout,
        bos_token_id=WordTokenizer.BOS,
        pad_token_id=WordTokenizer.PAD,
        eos_token_id=WordTokenizer.EOS,
        decoder_start_token_id=WordTokenizer.BOS,
        forced_eos_token_id=None,
    )
    return BartForConditionalGeneration(config)


def pad_batch(sequences: list[list[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    width = max(len(s) for s in sequences)
    ids = torch.full((len(sequences), width), WordTokenizer.PAD, dtype=torch.long)
    mask = torch.zeros((len(sequences), width), dtype=torch.long)
    for i, seq in enumerate(sequences):
        ids[i, : len(seq)] = torch.tensor(seq, dtype=torch.long)
        mask[i, : len(seq)] = 1
    return ids, mask


def label_batch(sequences: list[list[int]]) -> torch.Tensor:
    width = max(len(s) for s in sequences)
    labels = torch.full((len(sequences), width), -100, dtype=torch.long)
    for i, seq in enumerate(sequences):
        labels[i, : len(seq)] = torch.tensor(seq, dtype=torch.long)
    return labels


def cosine_with_warmup(optimizer, total_steps: int, warmup_steps: int):
    warmup_steps = max(1, warmup_steps)

    def factor(step: int) -> float:
        ramp = min(1.0, (step + 1) / warmup_steps)
        progress = min(1.0, step / max(1, total_steps))
        return ramp * 0.5 * (1.0 + math.cos(math.pi * progress))

    return torch.optim.lr_scheduler.LambdaLR(optimizer, factor)


def pretrain_copy(
    model: BartForConditionalGeneration,
    tokenizer: WordTokenizer,
    spec: BaseSpec,
    seed: int,
) -> dict:
    """Teach the fresh model to reproduce (and de-noise) token sequences."""
    content_ids = list(range(len(WordTokenizer.SPECIALS), tokenizer.vocab_size))
    if not content_ids:
        raise ValueError("tokenizer has no content words to pretrain on")
    rng = random.Random(seed)
    total_steps = sum(steps for steps, _, _, _ in spec.phases)
    optimizer = torch.optim.AdamW(model.parameters(), lr=spec.learning_rate)
    scheduler = cosine_with_warmup(optimizer, total_steps, warmup_steps=100)

    model.train()
    last_loss = 0.0
    for steps, lo, hi, noise_rate in spec.phases:
        for _ in range(steps):
            enc, dec = [], []
            for _ in range(spec.batch_size):
                seq = [rng.choice(content_ids) for _ in range(rng.randint(lo, hi))]
                noisy = list(seq)
                if rng.random() < noise_rate:
                    for _ in range(rng.randint(1, 3)):
                        noisy.insert(rng.randrange(len(noisy) + 1), rng.choice(content_ids))
                enc.append(noisy + [WordTokenizer.EOS])
                dec.append(seq + [WordTokenizer.EOS])
            ids, mask = pad_batch(enc)
            out = model(input_ids=ids, attention_mask=mask, labels=label_batch(dec))
            out.loss.backward()
            optimizer.step()
            scheduler.step()
            optimizer.zero_grad()
            last_loss = out.loss.item()
    return {"steps": total_steps, "final_loss": last_loss}
