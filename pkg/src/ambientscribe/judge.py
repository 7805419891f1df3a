"""Pairwise rubric judging: a judge model sees two HPI texts as Note A and
Note B in randomized order, scores each rubric criterion, and must pick a
winner; win rate is the fraction of comparisons where the candidate wins."""
from __future__ import annotations

import json
import logging
import random
import re
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib.resources import files
from pathlib import Path

from .providers import ChatMessage, ChatProvider, ChatRequest, ChatResponse, ProviderError

logger = logging.getLogger(__name__)

__all__ = [
    "JudgeError",
    "VerdictParseError",
    "JudgeAbortError",
    "CANDIDATE_FIRST",
    "REFERENCE_FIRST",
    "ORDERS",
    "RubricCriterion",
    "Rubric",
    "load_rubric",
    "default_rubric",
    "JudgeVerdict",
    "WinRateReport",
    "render_judge_prompt",
    "parse_verdict",
    "run_win_rate",
    "write_verdict_log",
    "ScriptedJudge",
]

CANDIDATE_FIRST = "candidate_first"
REFERENCE_FIRST = "reference_first"
ORDERS = (CANDIDATE_FIRST, REFERENCE_FIRST)

RUBRIC_CRITERION_COUNT = 8
MAX_EXCLUDED_FRACTION = 0.10

_WINNER_RE = re.compile(r"WINNER:\s*([AB])\b", re.IGNORECASE)
_SCORE_LINE_RE = re.compile(
    r"^\s*([A-Za-z][A-Za-z &']*?)\s*:\s*A\s*[=:]\s*([0-2])\s*[,;]?\s*B\s*[=:]\s*([0-2])\s*$"
)
_LEVEL_RE = re.compile(r"^([0-2])\s*-\s*(.*)$")


class JudgeError(Exception):
    pass


class VerdictParseError(JudgeError):
    pass


class JudgeAbortError(JudgeError):
    def __init__(self, excluded: int, total: int):
        super().__init__(
            f"aborted: {excluded} of {total} comparisons failed past the retry "
            f"(limit {MAX_EXCLUDED_FRACTION:.0%})"
        )
        self.excluded = excluded
        self.total = total


@dataclass(frozen=True)
class RubricCriterion:
    name: str
    levels: dict  # score (0..2) -> description; 0 may be empty when the
    # source text folds the unsatisfactory wording into the level-1 paragraph.

    def __post_init__(self):
        if not self.name:
            raise JudgeError("criterion name must be non-empty")
        if not set(self.levels) <= {0, 1, 2}:
            raise JudgeError(f"criterion {self.name!r} has scores outside 0..2")
        for required in (2, 1):
            if not self.levels.get(required):
                raise JudgeError(f"criterion {self.name!r} is missing the level-{required} text")


@dataclass(frozen=True)
class Rubric:
    title: str
    criteria: tuple[RubricCriterion, ...]
    text: str  # the verbatim file content that goes into the prompt

    def __post_init__(self):
        if len(self.criteria) != RUBRIC_CRITERION_COUNT:
            raise JudgeError(
                f"rubric must have exactly {RUBRIC_CRITERION_COUNT} criteria, "
                f"got {len(self.criteria)}"
            )

    @property
    def max_total_score(self) -> int:
        return 2 * len(self.criteria)

    def criterion_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.criteria)


def _parse_rubric_text(raw: str) -> tuple[str, tuple[RubricCriterion, ...]]:
    title = ""
    criteria: list[RubricCriterion] = []
    current_name: str | None = None
    current_levels: dict = {}
    current_score: int | None = None

    def flush_criterion() -> None:
        nonlocal current_name, current_levels, current_score
        if current_name is not None:
            levels = {s: t.strip() for s, t in current_levels.items()}
            levels.setdefault(0, "")
            criteria.append(RubricCriterion(name=current_name, levels=levels))
        current_name = None
        current_levels = {}
        current_score = None

    for line in raw.splitlines():
        stripped = line.strip()
        if not stripped:
            current_score = None
            continue
        level = _LEVEL_RE.match(stripped)
        if level and current_name is not None:
            current_score = int(level.group(1))
            current_levels[current_score] = level.group(2)
            continue
        if stripped.endswith(":"):
            flush_criterion()
            current_name = stripped[:-1].strip()
            continue
        if current_name is None:
            if not title:
                title = stripped
        elif current_score is not None:
            current_levels[current_score] += " " + stripped
    flush_criterion()
    return title, tuple(criteria)


def load_rubric(path: str | Path) -> Rubric:
    raw = Path(path).read_text(encoding="utf-8")
    title, criteria = _parse_rubric_text(raw)
    return Rubric(title=title, criteria=criteria, text=raw.strip())


def default_rubric() -> Rubric:
    return load_rubric(Path(str(files("ambientscribe") / "prompts" / "rubric.txt")))


@dataclass(frozen=True)
class JudgeVerdict:
    comparison_id: str
    winner: str  # candidate | reference
    presented_order: str
    scores: dict | None  # criterion -> {"candidate": 0..2, "reference": 0..2}
    judge_model: str

    def __post_init__(self):
        if self.winner not in ("candidate", "reference"):
            raise JudgeError(f"invalid winner {self.winner!r}")
        if self.presented_order not in ORDERS:
            raise JudgeError(f"invalid presented_order {self.presented_order!r}")

    def to_dict(self) -> dict:
        return {
            "comparison_id": self.comparison_id,
            "winner": self.winner,
            "presented_order": self.presented_order,
            "scores": self.scores,
            "judge_model": self.judge_model,
        }


@dataclass(frozen=True)
class WinRateReport:
    wins: int
    comparisons: int
    win_rate: float
    runs: int
    stdev_across_runs: float | None
    per_run_rates: tuple[float, ...]
    wins_by_order: dict
    comparisons_by_order: dict
    excluded: int

    def to_dict(self) -> dict:
        return {
            "wins": self.wins,
            "comparisons": self.comparisons,
            "win_rate": self.win_rate,
            "runs": self.runs,
            "stdev_across_runs": self.stdev_across_runs,
            "per_run_rates": list(self.per_run_rates),
            "wins_by_order": dict(self.wins_by_order),
            "comparisons_by_order": dict(self.comparisons_by_order),
            "excluded": self.excluded,
        }

    def render_text(self) -> str:
        lines = [
            "pairwise win rate",
            f"  wins: {self.wins} of {self.comparisons} comparisons"
            f" ({self.excluded} excluded)",
            f"  win rate: {self.win_rate:.2f}",
        ]
        if self.stdev_across_runs is None:
            lines.append(f"  runs: {self.runs}")
        else:
            lines.append(f"  runs: {self.runs}, stdev across runs: {self.stdev_across_runs:.3f}")
        for order in ORDERS:
            lines.append(
                f"  {order}: {self.wins_by_order.get(order, 0)}"
                f"/{self.comparisons_by_order.get(order, 0)} candidate wins"
            )
        return "\n".join(lines)


def render_judge_prompt(
    candidate: str,
    reference: str,
    rubric: Rubric,
    order: str,
    model: str = "",
    comparison_id: str = "",
) -> ChatRequest:
    """Build the forced-choice comparison prompt with randomized note labels."""
    if not candidate.strip() or not reference.strip():
        raise JudgeError("both notes must be non-empty")
    if order not in ORDERS:
        raise JudgeError(f"invalid order {order!r}")
    first, second = (candidate, reference) if order == CANDIDATE_FIRST else (reference, candidate)
    criterion_lines = "\n".join(f"{name}: A=<0-2> B=<0-2>" for name in rubric.criterion_names())
    content = (
        "You are given two History of Present Illness (HPI) notes written from the "
        "same patient visit. Score both notes against every criterion in the rubric "
        "below, then choose the single note with the highest overall quality. You "
        "must pick exactly one winner even if the notes are close.\n\n"
        f"RUBRIC:\n{rubric.text}\n\n"
        f"Note A:\n{first}\n\n"
        f"Note B:\n{second}\n\n"
        "OUTPUT FORMAT:\n"
        "Write one line per criterion, exactly in the form:\n"
        f"{criterion_lines}\n"
        "Then finish with exactly one final line reading either \"WINNER: A\" or "
        "\"WINNER: B\"."
    )
    return ChatRequest(
        model=model,
        messages=(ChatMessage("user", content),),
        temperature=0.0,
        request_tag=comparison_id,
    )


def parse_verdict(
    raw: str,
    order: str,
    comparison_id: str = "",
    judge_model: str = "",
) -> JudgeVerdict:
    """Map the judge's A/B answer back through the presented order.

    The last WINNER line wins; per-criterion scores are captured when the
    output follows the requested format and left null otherwise.
    """
    if order not in ORDERS:
        raise JudgeError(f"invalid order {order!r}")
    winners = _WINNER_RE.findall(raw)
    if not winners:
        raise VerdictParseError(f"no WINNER line in judge output for {comparison_id or '?'}")
    label = winners[-1].upper()
    a_side = "candidate" if order == CANDIDATE_FIRST else "reference"
    b_side = "reference" if order == CANDIDATE_FIRST else "candidate"
    winner = a_side if label == "A" else b_side

    scores: dict = {}
    for line in raw.splitlines():
        match = _SCORE_LINE_RE.match(line)
        if match:
            name = match.group(1).strip()
            a_score, b_score = int(match.group(2)), int(match.group(3))
            scores[name] = {a_side: a_score, b_side: b_score}
    return JudgeVerdict(
        comparison_id=comparison_id,
        winner=winner,
        presented_order=order,
        scores=scores or None,
        judge_model=judge_model,
    )


def _judge_one(
    provider: ChatProvider,
    request: ChatRequest,
    order: str,
    comparison_id: str,
    judge_model: str,
) -> JudgeVerdict | None:
    """One comparison with a single retry; None means excluded."""
    for attempt in (1, 2):
        try:
            response = provider.complete_chat(request)
            return parse_verdict(
                response.content, order, comparison_id=comparison_id, judge_model=judge_model
            )
        except (VerdictParseError, ProviderError) as exc:
            if attempt == 2:
                logger.warning("comparison %s excluded after retry: %s", comparison_id, exc)
                return None
    return None


def run_win_rate(
    pairs,
    judge_provider: ChatProvider,
    runs: int = 3,
    seed: int = 0,
    rubric: Rubric | None = None,
    judge_model: str = "",
    max_workers: int = 4,
    verdict_log_path: str | Path | None = None,
) -> WinRateReport:
    """Judge every (candidate, reference) pair `runs` times with the
    presented order drawn per comparison from the seeded generator.

    Comparisons that fail parsing past one retry are excluded from the
    denominator; more than 10% exclusions aborts the report.
    """
    pairs = list(pairs)
    if not pairs:
        raise JudgeError("pairs must be non-empty")
    if runs < 1:
        raise JudgeError("runs must be >= 1")
    rubric = rubric or default_rubric()

    # The order schedule is drawn up front so concurrency cannot perturb it.
    rng = random.Random(seed)
    schedule = []
    for run in range(runs):
        for index, (candidate, reference) in enumerate(pairs):
            order = rng.choice(ORDERS)
            comparison_id = f"run{run}:pair{index}:{order}"
            schedule.append((run, comparison_id, order, candidate, reference))

    def work(item):
        run, comparison_id, order, candidate, reference = item
        request = render_judge_prompt(
            candidate, reference, rubric, order, model=judge_model, comparison_id=comparison_id
        )
        return run, order, _judge_one(judge_provider, request, order, comparison_id, judge_model)

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        outcomes = list(pool.map(work, schedule))

    total = len(outcomes)
    excluded = sum(1 for _, _, verdict in outcomes if verdict is None)
    if excluded > MAX_EXCLUDED_FRACTION * total:
        raise JudgeAbortError(excluded, total)
    if excluded:
        logger.warning("excluded %d of %d comparisons", excluded, total)

    verdicts = [v for _, _, v in outcomes if v is not None]
    wins = sum(1 for v in verdicts if v.winner == "candidate")
    comparisons = len(verdicts)
    win_rate = wins / comparisons

    per_run_rates = []
    for run in range(runs):
        run_verdicts = [v for r, _, v in outcomes if r == run and v is not None]
        if run_verdicts:
            per_run_rates.append(
                sum(1 for v in run_verdicts if v.winner == "candidate") / len(run_verdicts)
            )
    stdev = statistics.stdev(per_run_rates) if len(per_run_rates) > 1 else None

    wins_by_order = {order: 0 for order in ORDERS}
    comparisons_by_order = {order: 0 for order in ORDERS}
    for verdict in verdicts:
        comparisons_by_order[verdict.presented_order] += 1
        if verdict.winner == "candidate":
            wins_by_order[verdict.presented_order] += 1

    if verdict_log_path is not None:
        write_verdict_log(verdict_log_path, verdicts)

    return WinRateReport(
        wins=wins,
        comparisons=comparisons,
        win_rate=win_rate,
        runs=runs,
        stdev_across_runs=stdev,
        per_run_rates=tuple(per_run_rates),
        wins_by_order=wins_by_order,
        comparisons_by_order=comparisons_by_order,
        excluded=excluded,
    )


def write_verdict_log(path: str | Path, verdicts) -> None:
    """One JSON object per comparison, canonical key order."""
    with open(path, "w", encoding="utf-8") as handle:
        for verdict in verdicts:
            handle.write(json.dumps(verdict.to_dict(), sort_keys=True, ensure_ascii=False))
            handle.write("\n")


class ScriptedJudge:
    """Deterministic judge stand-in driven by the comparison id.

    The comparison id carries "run{r}:pair{i}:{order}", which lets a script
    pick sides by meaning (candidate vs reference) rather than by label.

    Modes:
      always_candidate / always_reference: pick that side regardless of order.
      always_a / always_b: positional bias, ignores order.
      coinflip: per-comparison seeded coin.
      labels: follow the winner list by pair index (mirrors ground truth).
    """

    MODES = ("always_candidate", "always_reference", "always_a", "always_b", "coinflip", "labels")

    def __init__(
        self,
        mode: str,
        seed: int = 0,
        labels=None,
        malformed_ids=(),
        malformed_once_ids=(),
        provider_id: str = "scripted-judge",
    ):
        if mode not in self.MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "labels" and not labels:
            raise ValueError("labels mode needs a non-empty labels list")
        self.mode = mode
        self.seed = seed
        self.labels = list(labels or [])
        self.malformed_ids = set(malformed_ids)
        self.malformed_once_ids = set(malformed_once_ids)
        self.provider_id = provider_id
        self.calls_by_id: dict[str, int] = {}
        self.request_log: list[ChatRequest] = []

    @staticmethod
    def _parse_id(comparison_id: str) -> tuple[int, int, str]:
        run_part, pair_part, order = comparison_id.split(":")
        return int(run_part[len("run"):]), int(pair_part[len("pair"):]), order

    def _winning_label(self, comparison_id: str) -> str:
        run, pair_index, order = self._parse_id(comparison_id)
        if self.mode == "always_a":
            return "A"
        if self.mode == "always_b":
            return "B"
        if self.mode == "coinflip":
            return random.Random(f"{self.seed}:{comparison_id}").choice("AB")
        if self.mode == "labels":
            side = self.labels[pair_index % len(self.labels)]
        else:
            side = "candidate" if self.mode == "always_candidate" else "reference"
        if order == CANDIDATE_FIRST:
            return "A" if side == "candidate" else "B"
        return "B" if side == "candidate" else "A"

    def complete_chat(self, request: ChatRequest) -> ChatResponse:
        self.request_log.append(request)
        comparison_id = request.request_tag
        seen = self.calls_by_id.get(comparison_id, 0)
        self.calls_by_id[comparison_id] = seen + 1
        if comparison_id in self.malformed_ids or (
            comparison_id in self.malformed_once_ids and seen == 0
        ):
            content = "The notes are of comparable quality overall."
        else:
            label = self._winning_label(comparison_id)
            a_score = 2 if label == "A" else 1
            b_score = 2 if label == "B" else 1
            content = (
                f"Chief Complaint: A={a_score} B={b_score}\n"
                "Chronology: A=2 B=2\n"
                f"WINNER: {label}"
            )
        return ChatResponse(content=content, latency_ms=0.1, provider_id=self.provider_id)
