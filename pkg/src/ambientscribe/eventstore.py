"""Append-only note lifecycle event log.

One JSON object per line, canonical key order, fsync on append. An
in-memory index is rebuilt on open so ordering invariants can be enforced
against everything already on disk.
"""
from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator

__all__ = [
    "StoreError",
    "EventOrderingError",
    "EVENT_KINDS",
    "SECTION_NAMES",
    "NoteEvent",
    "NoteEventStore",
    "FinetunePair",
    "ExportResult",
    "export_finetune_pairs",
    "write_finetune_pairs",
    "load_finetune_pairs",
]

EVENT_KINDS = ("generated", "edited", "submitted")
SECTION_NAMES = (
    "cc",
    "hpi",
    "encounters_vitals",
    "objective",
    "assessment_plan",
    "patient_instructions",
)


class StoreError(Exception):
    pass


class EventOrderingError(StoreError):
    pass


def _to_utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


@dataclass(frozen=True)
class NoteEvent:
    note_id: str
    visit_id: str
    kind: str
    sections: dict
    timestamp: datetime
    trace_id: str | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise StoreError(f"unknown event kind {self.kind!r}; expected one of {EVENT_KINDS}")
        if not self.note_id:
            raise StoreError("note_id must be non-empty")
        object.__setattr__(self, "timestamp", _to_utc(self.timestamp))

    def to_json_line(self) -> str:
        payload = {
            "note_id": self.note_id,
            "visit_id": self.visit_id,
            "kind": self.kind,
            "sections": self.sections,
            "timestamp": self.timestamp.isoformat(),
            "trace_id": self.trace_id,
        }
        return json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json_line(cls, line: str) -> "NoteEvent":
        try:
            payload = json.loads(line)
            return cls(
                note_id=payload["note_id"],
                visit_id=payload["visit_id"],
                kind=payload["kind"],
                sections=payload["sections"],
                timestamp=datetime.fromisoformat(payload["timestamp"]),
                trace_id=payload.get("trace_id"),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise StoreError(f"malformed event line: {line!r}") from exc


class NoteEventStore:
    """Durable JSONL event log with per-note ordering enforcement."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._by_note: dict[str, list[NoteEvent]] = {}
        self._count = 0
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        with self.path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                event = NoteEvent.from_json_line(line)
                self._by_note.setdefault(event.note_id, []).append(event)
                self._count += 1

    def _check_ordering(self, event: NoteEvent) -> None:
        prior = self._by_note.get(event.note_id, [])
        if prior and event.timestamp < prior[-1].timestamp:
            raise EventOrderingError(
                f"timestamp for note {event.note_id!r} moves backwards "
                f"({event.timestamp.isoformat()} < {prior[-1].timestamp.isoformat()})"
            )
        if event.kind == "submitted" and not any(p.kind == "generated" for p in prior):
            raise EventOrderingError(
                f"submitted event for note {event.note_id!r} has no prior generated event"
            )

    def append(self, event: NoteEvent) -> str:
        """Durably append one event; returns the stored event id."""
        line = event.to_json_line()
        with self._lock:
            self._check_ordering(event)
            with self.path.open("a", encoding="utf-8") as fh:
                start = fh.tell()
                try:
                    fh.write(line + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
                except OSError:
                    # Leave no partial record behind.
                    try:
                        fh.truncate(start)
                    except OSError:
                        pass
                    raise
            self._by_note.setdefault(event.note_id, []).append(event)
            self._count += 1
            return f"evt-{self._count}"

    def events_for(self, note_id: str) -> list[NoteEvent]:
        with self._lock:
            return list(self._by_note.get(note_id, []))

    def note_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._by_note)

    def iter_events(self) -> Iterator[NoteEvent]:
        with self._lock:
            snapshot = [e for events in self._by_note.values() for e in events]
        return iter(snapshot)

    def __len__(self) -> int:
        with self._lock:
            return self._count

    def latest_of_kind(self, note_id: str, kind: str) -> NoteEvent | None:
        with self._lock:
            for event in reversed(self._by_note.get(note_id, [])):
                if event.kind == kind:
                    return event
        return None


@dataclass(frozen=True)
class FinetunePair:
    source_text: str
    target_text: str


@dataclass(frozen=True)
class ExportResult:
    pairs: tuple[FinetunePair, ...]
    dropped_empty: int
    skipped_unpaired: int


_NEWLINE_RUNS = re.compile(r"\n{3,}")


def _compile_patterns(patterns: list[str]) -> list[re.Pattern]:
    compiled = []
    for pattern in patterns:
        try:
            compiled.append(re.compile(pattern, re.IGNORECASE))
        except re.error:
            compiled.append(re.compile(re.escape(pattern), re.IGNORECASE))
    return compiled


def _preprocess_target(text: str, patterns: list[re.Pattern]) -> str:
    kept = [
        line
        for line in text.splitlines()
        if not any(p.search(line) for p in patterns)
    ]
    joined = "\n".join(kept).strip()
    return _NEWLINE_RUNS.sub("\n\n", joined)


def export_finetune_pairs(
    store: NoteEventStore,
    section: str,
    exclusion_phrases: list[str] | None = None,
) -> ExportResult:
    """Pair each note's generated section with its submitted, cleaned text.

    Notes missing either side are skipped; targets that clean down to
    nothing are dropped. Both tallies are reported alongside the pairs.
    """
    if section not in SECTION_NAMES:
        raise StoreError(f"unknown section {section!r}; expected one of {SECTION_NAMES}")
    patterns = _compile_patterns(exclusion_phrases or [])
    pairs: list[FinetunePair] = []
    dropped = 0
    skipped = 0
    for note_id in store.note_ids():
        generated = store.latest_of_kind(note_id, "generated")
        submitted = store.latest_of_kind(note_id, "submitted")
        if generated is None or submitted is None:
            skipped += 1
            continue
        source = generated.sections.get(section, "")
        raw_target = submitted.sections.get(section, "")
        if not source or not raw_target:
            skipped += 1
            continue
        target = _preprocess_target(raw_target, patterns)
        if not target:
            dropped += 1
            continue
        pairs.append(FinetunePair(source_text=source, target_text=target))
    return ExportResult(pairs=tuple(pairs), dropped_empty=dropped, skipped_unpaired=skipped)


def write_finetune_pairs(path: str | Path, pairs: tuple[FinetunePair, ...] | list[FinetunePair]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(
                json.dumps(
                    {"source": pair.source_text, "target": pair.target_text},
                    sort_keys=True,
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_finetune_pairs(path: str | Path) -> list[FinetunePair]:
    pairs = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            pairs.append(FinetunePair(source_text=payload["source"], target_text=payload["target"]))
    return pairs
