"""Compression-versus-retention evaluation against a running endpoint.

Reproduces the comparison protocol behind the note-length results table:
character lengths of generated vs edited vs post-processed text, an
embedding-overlap F1 for semantic retention, and paired t-tests on the
length changes.
"""
from __future__ import annotations

import hashlib
import math
import statistics
from dataclasses import dataclass

import numpy as np
from scipy import stats

from notepostproc.pairs import Pair

__all__ = [
    "EndpointError",
    "CompressionRow",
    "CompressionReport",
    "embedding_f1",
    "evaluate_compression",
]

EMBEDDING_DIM = 64


class EndpointError(RuntimeError):
    pass


def _token_vector(token: str) -> np.ndarray:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
    vec = rng.standard_normal(EMBEDDING_DIM)
    return vec / np.linalg.norm(vec)


def embedding_f1(candidate: str, reference: str) -> float:
    """Greedy max-cosine overlap F1 between the two token sequences.

    Equal tokens score exactly 1.0 by construction, so identical texts
    give F1 = 1.0 with no floating-point slack.
    """
    cand_tokens = candidate.split()
    ref_tokens = reference.split()
    if not cand_tokens and not ref_tokens:
        return 1.0
    if not cand_tokens or not ref_tokens:
        return 0.0
    cand = np.stack([_token_vector(t) for t in cand_tokens])
    ref = np.stack([_token_vector(t) for t in ref_tokens])
    sims = np.clip(cand @ ref.T, -1.0, 1.0)
    for i, ct in enumerate(cand_tokens):
        for j, rt in enumerate(ref_tokens):
            if ct == rt:
                sims[i, j] = 1.0
    precision = float(sims.max(axis=1).mean())
    recall = float(sims.max(axis=0).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _paired_t(a: list[float], b: list[float]) -> tuple[float, float] | None:
    if len(a) < 2:
        return None
    diffs = [x - y for x, y in zip(a, b)]
    if all(d == diffs[0] for d in diffs):
        # Zero-variance differences: identical samples are a clean null,
        # a constant shift is an unbounded effect.
        if diffs[0] == 0.0:
            return (0.0, 1.0)
        return (math.copysign(math.inf, diffs[0]), 0.0)
    t_stat, p_value = stats.ttest_rel(a, b)
    return (float(t_stat), float(p_value))


@dataclass(frozen=True)
class CompressionRow:
    label: str
    mean_chars: float
    stdev_chars: float
    percent_vs_generated: float | None

    def formatted_length(self) -> str:
        return f"{round(self.mean_chars)} +/- {round(self.stdev_chars)}"

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "mean_chars": self.mean_chars,
            "stdev_chars": self.stdev_chars,
            "percent_vs_generated": self.percent_vs_generated,
            "formatted": self.formatted_length(),
        }


@dataclass(frozen=True)
class CompressionReport:
    n: int
    rows: tuple[CompressionRow, ...]  # generated, edited, post-processed
    f1_post_vs_edited: float
    f1_post_vs_generated: float
    length_test_edited: tuple[float, float] | None
    length_test_post: tuple[float, float] | None

    def to_dict(self) -> dict:
        def test_dict(test):
            if test is None:
                return None
            return {"statistic": test[0], "p_value": test[1]}

        return {
            "n": self.n,
            "rows": [row.to_dict() for row in self.rows],
            "f1_post_vs_edited": self.f1_post_vs_edited,
            "f1_post_vs_generated": self.f1_post_vs_generated,
            "length_test_edited_vs_generated": test_dict(self.length_test_edited),
            "length_test_post_vs_generated": test_dict(self.length_test_post),
        }

    def render_text(self) -> str:
        lines = [f"note length comparison over {self.n} pairs", ""]
        label_width = max(len(row.label) for row in self.rows)
        for row in self.rows:
            change = "--" if row.percent_vs_generated is None else f"{row.percent_vs_generated:+.0f}%"
            lines.append(
                f"  {row.label.ljust(label_width)}  {row.formatted_length():>16}  {change:>6}"
            )
        lines.append("")
        lines.append(f"embedding F1, post-processed vs edited:    {self.f1_post_vs_edited:.3f}")
        lines.append(f"embedding F1, post-processed vs generated: {self.f1_post_vs_generated:.3f}")
        for name, test in (
            ("edited vs generated", self.length_test_edited),
            ("post-processed vs generated", self.length_test_post),
        ):
            if test is not None:
                lines.append(f"paired t on lengths, {name}: t={test[0]:.3f}, p={test[1]:.4g}")
        return "\n".join(lines)


def _length_stats(label: str, lengths: list[float], generated_mean: float | None) -> CompressionRow:
    mean = statistics.fmean(lengths)
    stdev = statistics.stdev(lengths) if len(lengths) > 1 else 0.0
    percent = None
    if generated_mean is not None and generated_mean > 0:
        percent = 100.0 * (mean - generated_mean) / generated_mean
    return CompressionRow(label, mean, stdev, percent)


def evaluate_compression(client, pairs: list[Pair]) -> CompressionReport:
    """Run every pair's source through the endpoint and compare the three texts.

    `client` is any httpx-compatible client (a real one pointed at a server
    or a test client wrapping the app). Endpoint failures abort.
    """
    if not pairs:
        raise EndpointError("no pairs to evaluate")
    outputs: list[str] = []
    for pair in pairs:
        try:
            response = client.post("/v1/postprocess", json={"text": pair.source})
        except Exception as exc:
            raise EndpointError(f"endpoint unreachable: {exc}") from exc
        if response.status_code != 200:
            raise EndpointError(
                f"endpoint returned {response.status_code}: {response.text[:200]}"
            )
        outputs.append(response.json()["text"])

    generated_lengths = [float(len(p.source)) for p in pairs]
    edited_lengths = [float(len(p.target)) for p in pairs]
    post_lengths = [float(len(o)) for o in outputs]
    generated_mean = statistics.fmean(generated_lengths)

    rows = (
        _length_stats("generated", generated_lengths, None),
        _length_stats("edited", edited_lengths, generated_mean),
        _length_stats("post-processed", post_lengths, generated_mean),
    )
    f1_edited = statistics.fmean(
        embedding_f1(out, pair.target) for out, pair in zip(outputs, pairs)
    )
    f1_generated = statistics.fmean(
        embedding_f1(out, pair.source) for out, pair in zip(outputs, pairs)
    )
    return CompressionReport(
        n=len(pairs),
        rows=rows,
        f1_post_vs_edited=f1_edited,
        f1_post_vs_generated=f1_generated,
        length_test_edited=_paired_t(edited_lengths, generated_lengths),
        length_test_post=_paired_t(post_lengths, generated_lengths),
    )
