"""Toy pair generator for training and evaluation runs without real data.

Each source is a few sentences of clinical-flavored word salad with one
fixed boilerplate sentence appended; the target drops the boilerplate.
Body sizes are chosen so the deleted text is about 17% of the source
characters, mirroring the shortening clinicians apply in practice.
"""
from __future__ import annotations

import random

from notepostproc.pairs import Pair

__all__ = ["DEFAULT_BOILERPLATE", "WORDS", "make_toy_pairs"]

DEFAULT_BOILERPLATE = "please follow up with your primary care team as needed ."

WORDS = (
    "patient", "reports", "denies", "mild", "moderate", "severe", "intermittent",
    "chronic", "acute", "pain", "cough", "fever", "nausea", "fatigue", "headache",
    "dizziness", "rash", "swelling", "cramping", "congestion", "onset", "days",
    "weeks", "left", "right", "abdominal", "chest", "lower", "upper", "back",
    "improved", "worsened", "stable", "unchanged", "medication", "ibuprofen",
    "rest", "fluids", "sleep", "appetite", "normal", "reduced", "no", "vomiting",
    "diarrhea", "chills", "since", "two", "three", "after", "meals", "exercise",
    "symptoms", "started", "gradually", "suddenly", "resolved", "persistent",
)


def _sentence(rng: random.Random) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(8, 11))) + " ."


def make_toy_pairs(
    n: int,
    seed: int = 0,
    boilerplate: str = DEFAULT_BOILERPLATE,
) -> list[Pair]:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not boilerplate.strip():
        raise ValueError("boilerplate must be non-empty")
    rng = random.Random(seed)
    pairs = []
    for _ in range(n):
        body = " ".join(_sentence(rng) for _ in range(4))
        pairs.append(Pair(source=body + " " + boilerplate, target=body))
    return pairs
