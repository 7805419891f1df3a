"""Visit-corpus ingestion.

Adapts a mock-consultation corpus laid out as one directory per visit
(transcript text, expert note text, optional audio file) plus a two-column
split manifest "visit_id<TAB>split_tag".
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

__all__ = [
    "CorpusError",
    "TranscriptParseError",
    "SPLIT_TAGS",
    "Utterance",
    "Transcript",
    "VisitRecord",
    "parse_human_transcript",
    "load_corpus",
]

SPLIT_TAGS = ("eval", "term_extraction")

# Speaker labels seen in consultation transcripts, mapped to canonical roles.
_CLINICIAN_LABELS = {"doctor", "dr", "clinician", "gp", "physician", "provider"}
_PATIENT_LABELS = {"patient", "pt"}

_LABEL_RE = re.compile(r"^\s*([A-Za-z][A-Za-z .']{0,30}?)\s*:\s*(.*)$")

TRANSCRIPT_FILENAME = "transcript.txt"
NOTE_FILENAME = "note.txt"
_AUDIO_SUFFIXES = (".webm", ".wav", ".mp3", ".m4a", ".ogg", ".flac")


class CorpusError(Exception):
    pass


class TranscriptParseError(CorpusError):
    pass


@dataclass(frozen=True)
class Utterance:
    speaker: str  # clinician | patient | unknown
    text: str
    start_seconds: float | None = None


@dataclass(frozen=True)
class Transcript:
    visit_id: str
    utterances: tuple[Utterance, ...]
    source: str  # human | machine
    model_tag: str | None = None

    def text(self, with_speakers: bool = False) -> str:
        if with_speakers:
            return "\n".join(f"{u.speaker}: {u.text}" for u in self.utterances)
        return "\n".join(u.text for u in self.utterances)


@dataclass(frozen=True)
class VisitRecord:
    visit_id: str
    split_tag: str
    audio_ref: str | None = None
    human_transcript: Transcript | None = None
    expert_note: str | None = None


def _map_speaker(label: str) -> str:
    cleaned = label.strip().strip(".").lower()
    if cleaned in _CLINICIAN_LABELS:
        return "clinician"
    if cleaned in _PATIENT_LABELS:
        return "patient"
    return "unknown"


def parse_human_transcript(raw: str, visit_id: str) -> Transcript:
    """Parse speaker-labelled dialogue text into an ordered Transcript.

    Lines without a "Label:" prefix continue the previous utterance.
    """
    utterances: list[Utterance] = []
    current_speaker: str | None = None
    current_parts: list[str] = []

    def flush() -> None:
        nonlocal current_speaker, current_parts
        if current_speaker is not None:
            text = " ".join(p for p in current_parts if p).strip()
            if text:
                utterances.append(Utterance(speaker=current_speaker, text=text))
        current_speaker = None
        current_parts = []

    for line in raw.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        match = _LABEL_RE.match(line)
        if match:
            flush()
            current_speaker = _map_speaker(match.group(1))
            current_parts = [match.group(2).strip()]
        elif current_speaker is not None:
            current_parts.append(stripped)
        else:
            # Leading unlabelled text belongs to nobody we can name.
            current_speaker = "unknown"
            current_parts = [stripped]
    flush()

    if not utterances:
        raise TranscriptParseError(f"{visit_id}: no parseable utterances")
    return Transcript(visit_id=visit_id, utterances=tuple(utterances), source="human")


def _read_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"unreadable corpus file: {path}") from exc
    except UnicodeDecodeError as exc:
        raise CorpusError(f"undecodable corpus file: {path}") from exc


def _parse_manifest(split_manifest: Path) -> list[tuple[str, str]]:
    entries: list[tuple[str, str]] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(_read_text(split_manifest).splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise CorpusError(f"{split_manifest}:{lineno}: expected 'visit_id<TAB>split_tag'")
        visit_id, split_tag = parts[0].strip(), parts[1].strip()
        if split_tag not in SPLIT_TAGS:
            raise CorpusError(
                f"{split_manifest}:{lineno}: unknown split tag {split_tag!r}; expected one of {SPLIT_TAGS}"
            )
        if visit_id in seen:
            raise CorpusError(f"{split_manifest}:{lineno}: duplicate visit_id {visit_id!r}")
        seen.add(visit_id)
        entries.append((visit_id, split_tag))
    return entries


def _find_audio(visit_dir: Path) -> str | None:
    candidates = sorted(
        p for p in visit_dir.iterdir() if p.is_file() and p.suffix.lower() in _AUDIO_SUFFIXES
    )
    return str(candidates[0]) if candidates else None


def load_corpus(root: str | Path, split_manifest: str | Path) -> list[VisitRecord]:
    """Load one VisitRecord per manifest entry, ordered by visit_id.

    Missing per-visit files leave the corresponding fields null; files that
    exist but cannot be read or parsed are an error naming the path.
    """
    root = Path(root)
    entries = _parse_manifest(Path(split_manifest))
    records: list[VisitRecord] = []
    for visit_id, split_tag in sorted(entries):
        visit_dir = root / visit_id
        audio_ref = None
        transcript = None
        note = None
        if visit_dir.is_dir():
            audio_ref = _find_audio(visit_dir)
            transcript_path = visit_dir / TRANSCRIPT_FILENAME
            if transcript_path.is_file():
                transcript = parse_human_transcript(_read_text(transcript_path), visit_id)
            note_path = visit_dir / NOTE_FILENAME
            if note_path.is_file():
                note = _read_text(note_path)
        else:
            logger.warning("visit directory missing for %s", visit_id)
        records.append(
            VisitRecord(
                visit_id=visit_id,
                split_tag=split_tag,
                audio_ref=audio_ref,
                human_transcript=transcript,
                expert_note=note,
            )
        )
    return records
