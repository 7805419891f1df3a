"""Deterministic offline providers for tests and desk-scale reproduction.

The chat mock resolves responses by exact playbook key, then prompt hash,
then a template echo; the transcription mock replays canned text with
seeded word-level corruption so expected WER equals the corruption rate.
"""
from __future__ import annotations

import hashlib
import logging
import random
import re
import time
from pathlib import Path

from .corpus import Transcript, Utterance
from .providers import (
    ChatProvider,
    ChatRequest,
    ChatResponse,
    EmptyTranscriptError,
    ProviderError,
    TranscriptionRequest,
    TransportError,
)

logger = logging.getLogger(__name__)

__all__ = [
    "MockChatProvider",
    "MockTranscriptionProvider",
    "FlakyChatProvider",
    "prompt_hash_key",
]

DRAFT_START = "NOTE DRAFT:"
DRAFT_END = "END NOTE DRAFT"
TRANSCRIPT_MARKER = "TRANSCRIPT:"

_SPEAKER_PREFIX = re.compile(r"^\s*[A-Za-z][A-Za-z .']{0,30}?\s*:\s*")


def prompt_hash_key(request: ChatRequest) -> str:
    digest = hashlib.sha256(request.canonical_text().encode("utf-8")).hexdigest()
    return f"sha256:{digest}"


def _parse_tag(tag: str) -> tuple[str, str, str] | None:
    parts = tag.split(":")
    if len(parts) == 3:
        return parts[0], parts[1], parts[2]
    return None


class MockChatProvider:
    """Playbook-driven chat mock.

    Playbook keys, in resolution order:
      - "{section}:{visit_id}" for generate-phase requests
      - "{section}.verify:{visit_id}" for verify-phase requests
      - "sha256:<hex>" matching the hash of the rendered messages
    Verify-phase requests with no playbook entry return the embedded draft
    unchanged (the no-edits-required verification outcome). Anything else
    falls back to echoing the first three transcript lines.
    """

    def __init__(
        self,
        playbook: dict[str, str] | None = None,
        delay_ms: float = 0.0,
        seed: int = 0,
        provider_id: str = "mock-chat",
    ):
        self.playbook = dict(playbook or {})
        self.delay_ms = delay_ms
        self.seed = seed
        self.provider_id = provider_id
        self.request_log: list[ChatRequest] = []

    def _resolve(self, request: ChatRequest) -> str:
        tag = _parse_tag(request.request_tag)
        if tag is not None:
            visit_id, section, phase = tag
            key = f"{section}:{visit_id}" if phase == "generate" else f"{section}.{phase}:{visit_id}"
            if key in self.playbook:
                return self.playbook[key]
        hashed = self.playbook.get(prompt_hash_key(request))
        if hashed is not None:
            return hashed
        last_user = next(
            (m.content for m in reversed(request.messages) if m.role == "user"), ""
        )
        if tag is not None and tag[2] == "verify":
            draft = _extract_between(last_user, DRAFT_START, DRAFT_END)
            if draft is not None:
                return draft
        return _echo_transcript_lines(last_user)

    def complete_chat(self, request: ChatRequest) -> ChatResponse:
        started = time.perf_counter()
        if self.delay_ms > 0:
            time.sleep(self.delay_ms / 1000.0)
        self.request_log.append(request)
        content = self._resolve(request)
        latency_ms = (time.perf_counter() - started) * 1000.0
        return ChatResponse(content=content, latency_ms=latency_ms, provider_id=self.provider_id)


def _extract_between(text: str, start: str, end: str) -> str | None:
    start_idx = text.find(start)
    if start_idx < 0:
        return None
    start_idx += len(start)
    end_idx = text.find(end, start_idx)
    if end_idx < 0:
        return None
    return text[start_idx:end_idx].strip()


def _echo_transcript_lines(text: str, limit: int = 3) -> str:
    marker = text.find(TRANSCRIPT_MARKER)
    tail = text[marker + len(TRANSCRIPT_MARKER):] if marker >= 0 else text
    lines = [line.strip() for line in tail.splitlines() if line.strip()]
    return "\n".join(lines[:limit])


class MockTranscriptionProvider:
    """Canned-text transcription with seeded word-level substitution.

    Canned text is looked up by audio_ref, then by the parent directory
    name, then read from a transcript.txt beside the audio file. Each
    substituted word becomes a unique nonsense token, so measured WER
    against the canned text equals the substituted fraction exactly.
    """

    def __init__(
        self,
        playbook: dict[str, str] | None = None,
        corruption_rate: float = 0.0,
        prompted_corruption_rate: float | None = None,
        seed: int = 0,
        delay_ms: float = 0.0,
        sibling_filename: str = "transcript.txt",
        provider_id: str = "mock-transcription",
    ):
        if not 0.0 <= corruption_rate < 1.0:
            raise ValueError("corruption_rate must be in [0, 1)")
        self.playbook = dict(playbook or {})
        self.corruption_rate = corruption_rate
        self.prompted_corruption_rate = prompted_corruption_rate
        self.seed = seed
        self.delay_ms = delay_ms
        self.sibling_filename = sibling_filename
        self.provider_id = provider_id
        self.request_log: list[TranscriptionRequest] = []

    def _canned_text(self, audio_ref: str) -> str:
        if audio_ref in self.playbook:
            return self.playbook[audio_ref]
        visit_key = Path(audio_ref).parent.name
        if visit_key in self.playbook:
            return self.playbook[visit_key]
        sibling = Path(audio_ref).parent / self.sibling_filename
        if sibling.is_file():
            return sibling.read_text(encoding="utf-8")
        raise ProviderError(f"no canned transcript for audio_ref {audio_ref!r}")

    def _corrupt(self, words: list[str], rate: float, rng: random.Random) -> list[str]:
        out = []
        for i, word in enumerate(words):
            if rng.random() < rate:
                # Unique nonsense token: never equals any real word or any
                # other substitution, so WER counts it as one substitution.
                out.append(f"q{i}z")
            else:
                out.append(word)
        return out

    def transcribe(self, request: TranscriptionRequest) -> Transcript:
        if self.delay_ms > 0:
            time.sleep(self.delay_ms / 1000.0)
        self.request_log.append(request)
        text = self._canned_text(request.audio_ref)
        lines = [
            _SPEAKER_PREFIX.sub("", line).strip()
            for line in text.splitlines()
            if line.strip()
        ]
        lines = [line for line in lines if line]
        if not lines:
            raise EmptyTranscriptError(f"canned transcript for {request.audio_ref!r} is empty")
        rate = self.corruption_rate
        if request.prompt and self.prompted_corruption_rate is not None:
            rate = self.prompted_corruption_rate
        rng = random.Random(f"{self.seed}:{request.model}:{request.audio_ref}:{bool(request.prompt)}")
        utterances = tuple(
            Utterance(speaker="unknown", text=" ".join(self._corrupt(line.split(), rate, rng)))
            for line in lines
        )
        visit_id = Path(request.audio_ref).parent.name or request.audio_ref
        return Transcript(
            visit_id=visit_id,
            utterances=utterances,
            source="machine",
            model_tag=request.model,
        )


class FlakyChatProvider:
    """Fault-injection wrapper: fail the first N calls, then delegate."""

    def __init__(self, inner: ChatProvider, failures_before_success: int):
        self.inner = inner
        self.failures_remaining = failures_before_success
        self.calls = 0

    def complete_chat(self, request: ChatRequest) -> ChatResponse:
        self.calls += 1
        if self.failures_remaining > 0:
            self.failures_remaining -= 1
            raise TransportError("injected transient failure", attempts=1)
        return self.inner.complete_chat(request)
