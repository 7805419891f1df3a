"""TF-IDF term extraction and transcription-prompt assembly.

Scoring is raw term frequency times ln(N/df), aggregated across documents
by taking the maximum; this variant is pinned so extraction is reproducible.
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

__all__ = [
    "TermExtractionError",
    "TermList",
    "DEFAULT_STOPWORDS",
    "DEFAULT_PROMPT_BUDGET",
    "tokenize",
    "extract_terms",
    "build_transcription_prompt",
    "save_term_list",
    "load_term_list",
    "load_stopwords",
]

_TOKEN_RE = re.compile(r"[a-z]{2,}")

# Transcription vendors cap prompt length around this many characters.
DEFAULT_PROMPT_BUDGET = 896

# Small embedded English stopword list; dialogue transcripts are dominated
# by function words and fillers without it. Overridable via load_stopwords.
DEFAULT_STOPWORDS = frozenset(
    """
    about above after again against all also am an and any are as at back
    be because been before being below between both but by can cannot could
    did do does doing down during each few for from further get got had has
    have having he her here hers herself him himself his how if in into is
    it its itself just like me mine more most my myself no nor not now of
    off ok okay on once only or other ought our ours ourselves out over own
    right same she should so some still such than that the their theirs them
    themselves then there these they this those through to too under until
    up very was we well were what when where which while who whom why will
    with would yeah yes you your yours yourself yourselves um uh er ah hm
    hmm gonna wanna kind sort bit lot really actually basically just maybe
    """.split()
)


class TermExtractionError(ValueError):
    """Raised when extraction has nothing to work with."""


@dataclass(frozen=True)
class TermList:
    terms: tuple[tuple[str, float], ...]
    k: int

    def __iter__(self):
        return iter(self.terms)

    def __len__(self) -> int:
        return len(self.terms)


def tokenize(text: str) -> list[str]:
    """Lowercased alphabetic tokens, length >= 2."""
    return _TOKEN_RE.findall(text.lower())


def extract_terms(
    documents: Sequence[str],
    k: int,
    stopwords: Iterable[str] | None = None,
) -> TermList:
    """Top-k corpus terms by max-over-documents tf * ln(N/df).

    Ordering is non-increasing by score with lexicographic tie-breaks, so
    extraction is deterministic and insensitive to document order.
    """
    if not documents:
        raise TermExtractionError("no documents given")
    if k < 1:
        raise TermExtractionError(f"k must be >= 1, got {k}")
    stop = DEFAULT_STOPWORDS if stopwords is None else {w.lower() for w in stopwords}

    doc_counts: list[Counter[str]] = []
    for doc in documents:
        tokens = [t for t in tokenize(doc) if t not in stop]
        if tokens:
            doc_counts.append(Counter(tokens))
    if not doc_counts:
        raise TermExtractionError("all documents are empty after tokenization")

    n_docs = len(documents)
    df: Counter[str] = Counter()
    for counts in doc_counts:
        df.update(counts.keys())

    scores: dict[str, float] = {}
    for counts in doc_counts:
        for term, tf in counts.items():
            score = tf * math.log(n_docs / df[term])
            if score > scores.get(term, -1.0):
                scores[term] = score

    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return TermList(terms=tuple(ranked[:k]), k=k)


def build_transcription_prompt(
    terms: TermList,
    max_chars: int = DEFAULT_PROMPT_BUDGET,
) -> str:
    """Join terms with ", ", truncated at the last whole term that fits."""
    out: list[str] = []
    length = 0
    for term, _ in terms:
        extra = len(term) if not out else len(term) + 2
        if length + extra > max_chars:
            break
        out.append(term)
        length += extra
    return ", ".join(out)


def save_term_list(path: str | Path, terms: TermList) -> None:
    lines = [f"{term}\t{score:.12g}" for term, score in terms]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_term_list(path: str | Path) -> TermList:
    terms: list[tuple[str, float]] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        try:
            term, score = line.split("\t")
            terms.append((term, float(score)))
        except ValueError as exc:
            raise TermExtractionError(f"{path}:{lineno}: malformed term line") from exc
    return TermList(terms=tuple(terms), k=len(terms))


def load_stopwords(path: str | Path) -> frozenset[str]:
    words = {
        line.strip().lower()
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    }
    return frozenset(words)
