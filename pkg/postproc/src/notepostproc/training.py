"""Fine-tuning on generated-to-edited pairs and checkpoint persistence."""
from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from notepostproc.modeling import (
    BaseSpec,
    DEFAULT_BASE_SPEC,
    build_model,
    cosine_with_warmup,
    label_batch,
    pad_batch,
    pretrain_copy,
)
from notepostproc.pairs import load_pairs
from notepostproc.tokenizer import WordTokenizer

__all__ = ["ConfigError", "TrainConfig", "train"]

logger = logging.getLogger(__name__)

TOKENIZER_FILE = "tokenizer.json"
TRAIN_CONFIG_FILE = "train_config.json"
TRAINING_LOG_FILE = "training_log.json"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Fine-tune settings. The defaults pin the full protocol: batch size
    8, 5 epochs, a cosine schedule with warmup ratio 0.1, and a 512-token
    limit. The peak learning rate is the one free knob and defaults to a
    value that converges at this model scale."""

    pairs_path: str
    output_dir: str
    max_sequence_tokens: int = 512
    batch_size: int = 8
    epochs: int = 5
    lr_schedule: str = "cosine"
    warmup_ratio: float = 0.1
    learning_rate: float = 3e-4
    seed: int = 0
    base_spec: BaseSpec = field(default=DEFAULT_BASE_SPEC)

    def __post_init__(self):
        if not self.pairs_path:
            raise ConfigError("pairs_path is required")
        if not self.output_dir:
            raise ConfigError("output_dir is required")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_schedule != "cosine":
            raise ConfigError(f"only the cosine schedule is supported, got {self.lr_schedule!r}")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigError(f"warmup_ratio must be in [0, 1), got {self.warmup_ratio}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_sequence_tokens < 8:
            raise ConfigError(f"max_sequence_tokens must be >= 8, got {self.max_sequence_tokens}")

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["base_spec"] = asdict(self.base_spec)
        return payload


def train(config: TrainConfig) -> Path:
    """Build the base, fine-tune it on the pairs, save a checkpoint dir.

    Deterministic for a fixed config: all randomness (init, dropout, data
    order, pretraining stream) flows from config.seed.
    """
    pairs = load_pairs(config.pairs_path)
    torch.manual_seed(config.seed)

    tokenizer = WordTokenizer.build(
        [p.source for p in pairs] + [p.target for p in pairs]
    )
    model = build_model(tokenizer, config.base_spec, seed=config.seed)
    for parameter in model.parameters():  # every parameter stays trainable
        parameter.requires_grad_(True)

    pretrain_info = pretrain_copy(model, tokenizer, config.base_spec, seed=config.seed)
    logger.info("pretrain done: %s", pretrain_info)

    truncated = 0
    data: list[tuple[list[int], list[int]]] = []
    for pair in pairs:
        source_ids, source_cut = tokenizer.encode(pair.source, config.max_sequence_tokens)
        target_ids, target_cut = tokenizer.encode(pair.target, config.max_sequence_tokens)
        truncated += int(source_cut) + int(target_cut)
        data.append((source_ids, target_ids))
    if truncated:
        logger.warning(
            "truncated %d sequences to %d tokens", truncated, config.max_sequence_tokens
        )

    batches_per_epoch = math.ceil(len(data) / config.batch_size)
    total_steps = batches_per_epoch * config.epochs
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    scheduler = cosine_with_warmup(
        optimizer, total_steps, warmup_steps=int(total_steps * config.warmup_ratio)
    )
    rng = random.Random(config.seed)

    model.train()
    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        order = list(range(len(data)))
        rng.shuffle(order)
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            chunk = [data[i] for i in order[start : start + config.batch_size]]
            ids, mask = pad_batch([c[0] for c in chunk])
            out = model(
                input_ids=ids, attention_mask=mask, labels=label_batch([c[1] for c in chunk])
            )
            out.loss.backward()
            optimizer.step()
            scheduler.step()
            optimizer.zero_grad()
            total += out.loss.item() * len(chunk)
        epoch_losses.append(total / len(data))
        logger.info("epoch %d: loss %.4f", epoch, epoch_losses[-1])

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(out_dir)
    tokenizer.save(out_dir / TOKENIZER_FILE)
    (out_dir / TRAIN_CONFIG_FILE).write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    log_payload = {
        "epoch_losses": epoch_losses,
        "truncated_sequences": truncated,
        "pretrain": pretrain_info,
        "pairs": len(pairs),
    }
    (out_dir / TRAINING_LOG_FILE).write_text(
        json.dumps(log_payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out_dir
