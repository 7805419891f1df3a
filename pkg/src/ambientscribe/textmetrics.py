"""Quantitative text comparison primitives.

Everything in here is pure computation over strings and numbers: edit
distances, embedding-overlap F1, paired significance tests, and the small
summary statistics the reports are built from. No I/O, no providers.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "MetricInputError",
    "NormalizationPolicy",
    "DEFAULT_POLICY",
    "WerResult",
    "word_error_rate",
    "levenshtein_distance",
    "char_edit_rate",
    "HashedEmbedding",
    "SimilarityReport",
    "greedy_embedding_f1",
    "PairedTestResult",
    "paired_t_test",
    "DistributionSummary",
    "summarize_distribution",
    "format_mean_stdev",
    "percent_reduction",
    "format_percent",
    "quantile",
    "MetricReport",
]

_PUNCT_RE = re.compile(r"[^\w\s]+")
_WS_RE = re.compile(r"\s+")


class MetricInputError(ValueError):
    """Raised when a metric would have to divide by an empty input."""


@dataclass(frozen=True)
class NormalizationPolicy:
    """Text normalization applied before word-level comparison.

    Applying the policy twice gives the same result as applying it once;
    reports must state which policy produced their numbers.
    """

    lowercase: bool = True
    strip_punctuation: bool = True
    collapse_whitespace: bool = True

    def apply(self, text: str) -> str:
        out = text
        if self.lowercase:
            out = out.lower()
        if self.strip_punctuation:
            # Replace rather than delete so "fever,chills" stays two words.
            out = _PUNCT_RE.sub(" ", out)
        if self.collapse_whitespace:
            out = _WS_RE.sub(" ", out).strip()
        return out

    def words(self, text: str) -> list[str]:
        normalized = self.apply(text)
        return normalized.split()

    def describe(self) -> str:
        parts = []
        for name in ("lowercase", "strip_punctuation", "collapse_whitespace"):
            state = "on" if getattr(self, name) else "off"
            parts.append(f"{name}={state}")
        return ", ".join(parts)

    def to_dict(self) -> dict[str, bool]:
        return {
            "lowercase": self.lowercase,
            "strip_punctuation": self.strip_punctuation,
            "collapse_whitespace": self.collapse_whitespace,
        }


DEFAULT_POLICY = NormalizationPolicy()


@dataclass(frozen=True)
class WerResult:
    substitutions: int
    insertions: int
    deletions: int
    reference_words: int
    wer: float

    @property
    def edits(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def word_error_rate(
    reference: str,
    hypothesis: str,
    policy: NormalizationPolicy = DEFAULT_POLICY,
) -> WerResult:
    """Word-level edit distance between a reference and a hypothesis.

    Unit costs for substitution, insertion, and deletion. When several
    operation mixes achieve the minimal total, the backtrace prefers
    substitutions, then insertions, then deletions.
    """
    ref = policy.words(reference)
    hyp = policy.words(hypothesis)
    if not ref:
        raise MetricInputError("reference is empty after normalization")

    n, m = len(ref), len(hyp)
    # Full DP matrix so the backtrace can recover the operation counts.
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dist[i][0] = i
    for j in range(m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row = dist[i]
        prev = dist[i - 1]
        ref_word = ref[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (0 if ref_word == hyp[j - 1] else 1)
            row[j] = min(diag, row[j - 1] + 1, prev[j] + 1)

    subs = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        here = dist[i][j]
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and here == dist[i - 1][j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and here == dist[i - 1][j - 1] + 1:
            subs += 1
            i, j = i - 1, j - 1
        elif j > 0 and here == dist[i][j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1

    total = subs + ins + dels
    return WerResult(
        substitutions=subs,
        insertions=ins,
        deletions=dels,
        reference_words=n,
        wer=total / n,
    )


def levenshtein_distance(a: str, b: str) -> int:
    """Unit-cost edit distance over Unicode scalar values."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    # Vectorized row DP: the insertion pass is a running minimum of
    # cur[k] + (j - k), computed as j + cummin(cur[k] - k).
    b_codes = np.fromiter((ord(c) for c in b), dtype=np.int64, count=len(b))
    offsets = np.arange(len(b) + 1, dtype=np.int64)
    prev = offsets.copy()
    cur = np.empty(len(b) + 1, dtype=np.int64)
    for i, ch in enumerate(a, start=1):
        cur[0] = i
        sub_or_match = prev[:-1] + (b_codes != ord(ch))
        cur[1:] = np.minimum(sub_or_match, prev[1:] + 1)
        cur = np.minimum(cur, offsets + np.minimum.accumulate(cur - offsets))
        prev, cur = cur, prev
    return int(prev[-1])


def char_edit_rate(generated: str, edited: str) -> float:
    """Character edit distance normalized by the generated text length."""
    if not generated:
        raise MetricInputError("generated text is empty")
    return levenshtein_distance(generated, edited) / len(generated)


def _stable_token_seed(token: str, seed: int) -> int:
    import hashlib

    digest = hashlib.sha256(f"{seed}:{token}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class HashedEmbedding:
    """Deterministic offline token embeddings.

    Each token gets a fixed pseudo-random unit vector seeded from a hash of
    the token, blended with the mean vector of the surrounding bag so the
    embedding reflects the text it appears in. Bag blending keeps the result
    invariant under permutation of the token list, and nothing here needs a
    model download.
    """

    def __init__(self, dim: int = 64, seed: int = 0, context_weight: float = 0.25):
        if dim < 2:
            raise ValueError("dim must be at least 2")
        self.dim = dim
        self.seed = seed
        self.context_weight = context_weight
        self._cache: dict[str, np.ndarray] = {}

    def _base(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            rng = np.random.default_rng(_stable_token_seed(token, self.seed))
            vec = rng.standard_normal(self.dim)
            vec /= np.linalg.norm(vec)
            self._cache[token] = vec
        return vec

    def __call__(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.dim))
        base = np.stack([self._base(t) for t in tokens])
        if self.context_weight:
            bag = base.mean(axis=0)
            base = base + self.context_weight * bag
        return base


@dataclass(frozen=True)
class SimilarityReport:
    precision: float
    recall: float
    f1: float
    candidate_tokens: int
    reference_tokens: int


def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return matrix / norms


def greedy_embedding_f1(
    candidate_tokens: Sequence[str],
    reference_tokens: Sequence[str],
    embed: Callable[[Sequence[str]], np.ndarray] | None = None,
) -> SimilarityReport:
    """Greedy token-level embedding overlap.

    Recall is the mean over reference tokens of the best cosine similarity
    against any candidate token; precision is the mirror image; f1 is their
    harmonic mean (zero when both are zero).
    """
    if not candidate_tokens or not reference_tokens:
        raise MetricInputError("both token lists must be non-empty")
    if embed is None:
        embed = HashedEmbedding()
    cand = np.asarray(embed(candidate_tokens), dtype=float)
    ref = np.asarray(embed(reference_tokens), dtype=float)
    if cand.ndim != 2 or ref.ndim != 2 or cand.shape[1] != ref.shape[1]:
        raise MetricInputError(
            f"embedding dimensions disagree: {cand.shape} vs {ref.shape}"
        )
    sims = np.clip(_normalize_rows(cand) @ _normalize_rows(ref).T, -1.0, 1.0)
    precision = float(sims.max(axis=1).mean())
    recall = float(sims.max(axis=0).mean())
    if precision + recall == 0.0:
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return SimilarityReport(
        precision=precision,
        recall=recall,
        f1=f1,
        candidate_tokens=len(candidate_tokens),
        reference_tokens=len(reference_tokens),
    )


# --- Student's t machinery -------------------------------------------------

_BETACF_MAX_ITER = 300
_BETACF_REL_TOL = 1e-10
_BETACF_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETACF_TINY:
        d = _BETACF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_REL_TOL:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def _regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _two_sided_t_pvalue(t: float, df: int) -> float:
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return _regularized_incomplete_beta(df / 2.0, 0.5, x)


@dataclass(frozen=True)
class PairedTestResult:
    statistic: float
    degrees_of_freedom: int
    p_value: float
    significant: bool
    alpha: float


def paired_t_test(
    a: Sequence[float],
    b: Sequence[float],
    alpha: float = 0.05,
) -> PairedTestResult:
    """Two-sided paired t-test on matched samples.

    Uses the sample (n-1) standard deviation of the pairwise differences.
    All-zero differences are treated as t = 0, p = 1; zero variance with a
    nonzero mean difference gives an infinite statistic and p = 0.
    """
    if len(a) != len(b):
        raise MetricInputError(f"sample sizes differ: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise MetricInputError("paired t-test needs at least two pairs")
    diffs = [float(x) - float(y) for x, y in zip(a, b)]
    mean = sum(diffs) / n
    var = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    df = n - 1
    if var == 0.0:
        if mean == 0.0:
            t = 0.0
        else:
            t = math.inf if mean > 0 else -math.inf
    else:
        t = mean / math.sqrt(var / n)
    p = _two_sided_t_pvalue(t, df)
    return PairedTestResult(
        statistic=t,
        degrees_of_freedom=df,
        p_value=p,
        significant=p < alpha,
        alpha=alpha,
    )


@dataclass(frozen=True)
class DistributionSummary:
    mean: float
    stdev: float | None
    n: int


def summarize_distribution(values: Sequence[float]) -> DistributionSummary:
    """Mean and sample standard deviation; stdev is None for n < 2."""
    if not values:
        raise MetricInputError("cannot summarize an empty sample")
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        return DistributionSummary(mean=mean, stdev=None, n=n)
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return DistributionSummary(mean=mean, stdev=math.sqrt(var), n=n)


def format_mean_stdev(summary: DistributionSummary, digits: int = 2) -> str:
    mean = f"{summary.mean:.{digits}f}"
    if summary.stdev is None:
        return mean
    return f"{mean} +/- {summary.stdev:.{digits}f}"


def percent_reduction(baseline: float, treated: float) -> float:
    """Relative change from baseline to treated, as a percentage of baseline."""
    if baseline == 0:
        raise MetricInputError("baseline is zero; reduction is undefined")
    return 100.0 * (baseline - treated) / baseline


def format_percent(value: float) -> str:
    """Render a percentage rounded half-up to the nearest whole percent."""
    return f"{math.floor(value + 0.5):d}%"


def quantile(values: Sequence[float], q: float) -> float:
    """Nearest-rank quantile: the element at rank ceil(q * n), 1-based."""
    if not values:
        raise MetricInputError("cannot take a quantile of an empty sample")
    if not 0.0 < q <= 1.0:
        raise MetricInputError(f"q must be in (0, 1], got {q}")
    ordered = sorted(values)
    n = len(ordered)
    # The epsilon guards against float products like 0.7 * 10 == 7.000...01
    # pushing the ceiling one rank too high.
    rank = math.ceil(q * n - 1e-9)
    rank = max(1, min(n, rank))
    return ordered[rank - 1]


@dataclass
class MetricReport:
    """A named metric over a sample, with the policy that produced it."""

    metric: str
    n: int
    mean: float
    stdev: float | None
    policy: NormalizationPolicy | None = None
    per_item: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        out: dict = {
            "metric": self.metric,
            "n": self.n,
            "mean": self.mean,
            "stdev": self.stdev,
        }
        if self.policy is not None:
            out["policy"] = self.policy.to_dict()
        if self.per_item:
            out["per_item"] = self.per_item
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)
