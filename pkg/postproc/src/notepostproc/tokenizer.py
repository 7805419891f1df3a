"""Whitespace word tokenizer built from the training pairs.

Stand-in for the subword vocabulary a published checkpoint would ship
with; the base model here is trained from scratch offline, so the
vocabulary comes from the pairs file instead.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

__all__ = ["WordTokenizer"]


class WordTokenizer:
    # Id assignments follow the seq2seq convention the model config mirrors.
    BOS = 0
    PAD = 1
    EOS = 2
    UNK = 3
    SPECIALS = ("<s>", "<pad>", "</s>", "<unk>")

    def __init__(self, words: Sequence[str]):
        self.id_to_word: list[str] = list(self.SPECIALS) + list(words)
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}
        if len(self.word_to_id) != len(self.id_to_word):
            raise ValueError("duplicate words in vocabulary")

    @classmethod
    def build(cls, texts: Iterable[str]) -> "WordTokenizer":
        seen: dict[str, None] = {}
        for text in texts:
            for token in text.split():
                if token not in cls.SPECIALS:
                    seen.setdefault(token, None)
        return cls(list(seen))

    @property
    def vocab_size(self) -> int:
        return len(self.id_to_word)

    def encode(self, text: str, max_tokens: int | None = None) -> tuple[list[int], bool]:
        """Token ids ending in EOS, plus whether truncation happened."""
        ids = [self.word_to_id.get(t, self.UNK) for t in text.split()]
        truncated = False
        if max_tokens is not None and len(ids) > max_tokens - 1:
            ids = ids[: max_tokens - 1]  # leave room for EOS
            truncated = True
        return ids + [self.EOS], truncated

    def decode(self, ids: Iterable[int]) -> str:
        words = [
            self.id_to_word[i]
            for i in ids
            if len(self.SPECIALS) <= i < len(self.id_to_word)
        ]
        return " ".join(words)

    def save(self, path: str | Path) -> None:
        payload = {"words": self.id_to_word[len(self.SPECIALS):]}
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "WordTokenizer":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(payload["words"])
