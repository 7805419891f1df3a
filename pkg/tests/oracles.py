"""Slow, obviously-correct reference implementations used only by tests.

These deliberately share no code with the package: the word-level oracle
enumerates every monotone alignment path through the edit lattice, and the
character-level oracle is the textbook exponential recursion.
"""
from __future__ import annotations

from functools import lru_cache


def wer_oracle(ref: list[str], hyp: list[str]) -> tuple[int, set[tuple[int, int, int]]]:
    """Minimal edit cost and the set of optimal (subs, ins, dels) mixes.

    Explores every path of substitutions, insertions, and deletions through
    the alignment lattice. Exponential in principle, Delannoy-bounded in
    practice; fine for the short sequences the tests use.
    """
    n, m = len(ref), len(hyp)

    @lru_cache(maxsize=None)
    def best(i: int, j: int) -> tuple[int, frozenset[tuple[int, int, int]]]:
        if i == n and j == m:
            return 0, frozenset({(0, 0, 0)})
        options: list[tuple[int, tuple[int, int, int]]] = []
        if i < n and j < m:
            step_cost = 0 if ref[i] == hyp[j] else 1
            sub_inc = 0 if ref[i] == hyp[j] else 1
            options.append((step_cost, (sub_inc, 0, 0), best(i + 1, j + 1)))
        if j < m:
            options.append((1, (0, 1, 0), best(i, j + 1)))
        if i < n:
            options.append((1, (0, 0, 1), best(i + 1, j)))
        best_cost = None
        mixes: set[tuple[int, int, int]] = set()
        for step_cost, inc, (tail_cost, tail_mixes) in options:
            cost = step_cost + tail_cost
            if best_cost is None or cost < best_cost:
                best_cost = cost
                mixes = set()
            if cost == best_cost:
                for s, ins, d in tail_mixes:
                    mixes.add((s + inc[0], ins + inc[1], d + inc[2]))
        assert best_cost is not None
        return best_cost, frozenset(mixes)

    cost, mixes = best(0, 0)
    return cost, set(mixes)


def preferred_mix(mixes: set[tuple[int, int, int]]) -> tuple[int, int, int]:
    """Pick the optimal mix a substitution>insertion>deletion backtrace yields.

    Maximal substitutions first, then maximal insertions among those.
    """
    return max(mixes, key=lambda m: (m[0], m[1]))


def levenshtein_oracle(a: str, b: str) -> int:
    """Plain recursive edit distance, no memoization by design."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    if a[0] == b[0]:
        return levenshtein_oracle(a[1:], b[1:])
    return 1 + min(
        levenshtein_oracle(a[1:], b[1:]),
        levenshtein_oracle(a, b[1:]),
        levenshtein_oracle(a[1:], b),
    )
