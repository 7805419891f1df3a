"""Modular note generation: three SOAP section chains run in parallel, each
a generate call followed by a verification call, stitched into one plain-text
note; patient instructions run as a fourth concurrent single-call chain."""
from __future__ import annotations

import json
import logging
import re
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib.resources import files
from pathlib import Path

from .corpus import Transcript
from .providers import ChatMessage, ChatProvider, ChatRequest, ProviderError

logger = logging.getLogger(__name__)

__all__ = [
    "PipelineError",
    "SectionGenerationError",
    "NoteGenerationError",
    "StitchError",
    "SOAP_SECTIONS",
    "SECTIONS",
    "PromptBundle",
    "SoapNote",
    "TraceCall",
    "GenerationTrace",
    "render_prompt",
    "render_verification_prompt",
    "generate_section",
    "generate_soap_note",
    "split_cc_hpi",
    "stitch_note",
    "render_note_document",
    "extract_hpi",
]

SOAP_SECTIONS = ("hpi", "encounters_vitals", "assessment_plan")
SECTIONS = SOAP_SECTIONS + ("patient_instructions",)

SUBJECTIVE_HEADER = "SUBJECTIVE"
OBJECTIVE_HEADER = "OBJECTIVE"
ASSESSMENT_PLAN_HEADER = "ASSESSMENT AND PLAN"
INSTRUCTIONS_HEADER = "INSTRUCTIONS"
CC_PREFIX = "CC:"
HPI_PREFIX = "HPI:"

DRAFT_START = "NOTE DRAFT:"
DRAFT_END = "END NOTE DRAFT"
TRANSCRIPT_MARKER = "TRANSCRIPT:"

_HEADERS = (SUBJECTIVE_HEADER, OBJECTIVE_HEADER, ASSESSMENT_PLAN_HEADER, INSTRUCTIONS_HEADER)


class PipelineError(Exception):
    pass


class SectionGenerationError(PipelineError):
    def __init__(self, section: str, phase: str, cause: Exception):
        super().__init__(f"section {section!r} failed during {phase}: {cause}")
        self.section = section
        self.phase = phase
        self.cause = cause


class NoteGenerationError(PipelineError):
    """All-or-nothing failure: carries one message per failed section."""

    def __init__(self, failures: dict[str, str]):
        summary = "; ".join(f"{s}: {msg}" for s, msg in sorted(failures.items()))
        super().__init__(f"note generation failed: {summary}")
        self.failures = failures


class StitchError(PipelineError):
    pass


@dataclass(frozen=True)
class PromptBundle:
    preamble: str
    requirements: str
    verification: str
    section_instructions: dict
    examples: dict

    def __post_init__(self):
        got = set(self.section_instructions)
        if got != set(SECTIONS):
            raise PipelineError(
                f"bundle must define exactly the sections {sorted(SECTIONS)}, got {sorted(got)}"
            )

    @classmethod
    def from_dir(cls, path: str | Path) -> "PromptBundle":
        root = Path(path)
        if not root.is_dir():
            raise PipelineError(f"prompt bundle directory not found: {root}")

        def read(name: str) -> str:
            file_path = root / name
            if not file_path.is_file():
                raise PipelineError(f"prompt bundle missing {name} in {root}")
            return file_path.read_text(encoding="utf-8").strip()

        instructions = {section: read(f"{section}.txt") for section in SECTIONS}
        examples: dict = {}
        for section in SECTIONS:
            section_dir = root / "examples" / section
            texts = []
            if section_dir.is_dir():
                for example_path in sorted(section_dir.glob("*.txt")):
                    texts.append(example_path.read_text(encoding="utf-8").strip())
            examples[section] = tuple(texts)
        return cls(
            preamble=read("preamble.txt"),
            requirements=read("requirements.txt"),
            verification=read("verification.txt"),
            section_instructions=instructions,
            examples=examples,
        )

    @classmethod
    def default(cls) -> "PromptBundle":
        return cls.from_dir(Path(str(files("ambientscribe") / "prompts")))


@dataclass(frozen=True)
class SoapNote:
    cc: str
    hpi: str
    encounters_vitals: str
    assessment_plan: str
    objective: str = ""

    def __post_init__(self):
        if self.objective:
            raise PipelineError("the objective section is never generated")


@dataclass(frozen=True)
class TraceCall:
    section: str
    phase: str  # generate | verify
    prompt_chars: int
    output_chars: int
    latency_ms: float

    def to_dict(self) -> dict:
        return {
            "section": self.section,
            "phase": self.phase,
            "prompt_chars": self.prompt_chars,
            "output_chars": self.output_chars,
            "latency_ms": self.latency_ms,
        }


@dataclass(frozen=True)
class GenerationTrace:
    trace_id: str
    calls: tuple[TraceCall, ...]
    total_latency_ms: float

    def soap_calls(self) -> tuple[TraceCall, ...]:
        return tuple(c for c in self.calls if c.section in SOAP_SECTIONS)

    def to_dict(self) -> dict:
        return {
            "trace_id": self.trace_id,
            "calls": [c.to_dict() for c in self.calls],
            "total_latency_ms": self.total_latency_ms,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, payload: dict) -> "GenerationTrace":
        return cls(
            trace_id=payload["trace_id"],
            calls=tuple(TraceCall(**c) for c in payload["calls"]),
            total_latency_ms=payload["total_latency_ms"],
        )


def _examples_block(bundle: PromptBundle, section: str) -> str:
    examples = bundle.examples.get(section, ())
    if not examples:
        return ""
    parts = ["EXAMPLES:"]
    for i, text in enumerate(examples, 1):
        parts.append(f"Example {i}:\n{text}")
    return "\n\n".join(parts)


def render_prompt(
    bundle: PromptBundle,
    section: str,
    transcript: Transcript,
    model: str = "",
    temperature: float = 0.0,
) -> ChatRequest:
    """Deterministic generation request for one section.

    The system message carries preamble plus requirements, omitted for
    patient_instructions; the user message carries the section instructions,
    the multi-shot examples, and the labelled transcript.
    """
    if section not in SECTIONS:
        raise PipelineError(f"unknown section {section!r}; expected one of {SECTIONS}")
    if not transcript.utterances:
        raise PipelineError("transcript has no utterances")
    user_parts = [bundle.section_instructions[section]]
    examples = _examples_block(bundle, section)
    if examples:
        user_parts.append(examples)
    user_parts.append(f"{TRANSCRIPT_MARKER}\n{transcript.text(with_speakers=True)}")
    user = ChatMessage("user", "\n\n".join(user_parts))
    messages: tuple[ChatMessage, ...]
    if section == "patient_instructions":
        messages = (user,)
    else:
        messages = (ChatMessage("system", f"{bundle.preamble}\n\n{bundle.requirements}"), user)
    return ChatRequest(
        model=model,
        messages=messages,
        temperature=temperature,
        request_tag=f"{transcript.visit_id}:{section}:generate",
    )


def render_verification_prompt(
    bundle: PromptBundle,
    section: str,
    transcript: Transcript,
    draft: str,
    model: str = "",
    temperature: float = 0.0,
    include_transcript: bool = True,
) -> ChatRequest:
    if section not in SECTIONS:
        raise PipelineError(f"unknown section {section!r}; expected one of {SECTIONS}")
    user_parts = [
        bundle.verification,
        f"{DRAFT_START}\n{draft}\n{DRAFT_END}",
    ]
    if include_transcript:
        user_parts.append(f"{TRANSCRIPT_MARKER}\n{transcript.text(with_speakers=True)}")
    user = ChatMessage("user", "\n\n".join(user_parts))
    if section == "patient_instructions":
        messages: tuple[ChatMessage, ...] = (user,)
    else:
        messages = (ChatMessage("system", f"{bundle.preamble}\n\n{bundle.requirements}"), user)
    return ChatRequest(
        model=model,
        messages=messages,
        temperature=temperature,
        request_tag=f"{transcript.visit_id}:{section}:verify",
    )


def _timed_call(provider: ChatProvider, request: ChatRequest, section: str, phase: str) -> tuple[str, TraceCall]:
    prompt_chars = sum(len(m.content) for m in request.messages)
    started = time.perf_counter()
    try:
        response = provider.complete_chat(request)
    except ProviderError as exc:
        raise SectionGenerationError(section, phase, exc) from exc
    latency_ms = (time.perf_counter() - started) * 1000.0
    return response.content, TraceCall(
        section=section,
        phase=phase,
        prompt_chars=prompt_chars,
        output_chars=len(response.content),
        latency_ms=latency_ms,
    )


def generate_section(
    section: str,
    transcript: Transcript,
    bundle: PromptBundle,
    provider: ChatProvider,
    model: str = "",
    include_transcript_in_verification: bool = True,
) -> tuple[str, list[TraceCall]]:
    """One section chain: generate, then verify the generated draft."""
    request = render_prompt(bundle, section, transcript, model=model)
    draft, generate_call = _timed_call(provider, request, section, "generate")
    verify_request = render_verification_prompt(
        bundle,
        section,
        transcript,
        draft,
        model=model,
        include_transcript=include_transcript_in_verification,
    )
    verified, verify_call = _timed_call(provider, verify_request, section, "verify")
    return verified, [generate_call, verify_call]


def _instructions_chain(
    transcript: Transcript,
    bundle: PromptBundle,
    provider: ChatProvider,
    model: str,
    verify: bool,
    include_transcript_in_verification: bool,
) -> tuple[str, list[TraceCall]]:
    if verify:
        return generate_section(
            "patient_instructions",
            transcript,
            bundle,
            provider,
            model=model,
            include_transcript_in_verification=include_transcript_in_verification,
        )
    request = render_prompt(bundle, "patient_instructions", transcript, model=model)
    text, call = _timed_call(provider, request, "patient_instructions", "generate")
    return text, [call]


def split_cc_hpi(text: str) -> tuple[str, str, bool]:
    """Split a combined CC/HPI response on the first line starting "HPI:".

    Returns (cc, hpi, marker_found); without the marker the whole text is
    treated as HPI and cc is left empty.
    """
    lines = text.splitlines()
    for i, line in enumerate(lines):
        if line.strip().startswith(HPI_PREFIX):
            cc = "\n".join(lines[:i]).strip()
            if cc.startswith(CC_PREFIX):
                cc = cc[len(CC_PREFIX):].strip()
            first = line.strip()[len(HPI_PREFIX):].strip()
            rest = "\n".join(lines[i + 1:]).strip()
            hpi = f"{first}\n{rest}".strip() if rest else first
            return cc, hpi, True
    return "", text.strip(), False


def generate_soap_note(
    transcript: Transcript,
    bundle: PromptBundle,
    provider: ChatProvider,
    model: str = "",
    verify_instructions: bool = False,
    include_transcript_in_verification: bool = True,
    trace_id: str | None = None,
) -> tuple[SoapNote, str, GenerationTrace]:
    """Run the four section chains concurrently and stitch the result.

    Fails the whole note if any chain fails; trace calls are ordered by
    section then phase so traces are stable regardless of completion order.
    """
    started = time.perf_counter()
    with ThreadPoolExecutor(max_workers=len(SECTIONS)) as pool:
        futures = {
            section: pool.submit(
                generate_section,
                section,
                transcript,
                bundle,
                provider,
                model,
                include_transcript_in_verification,
            )
            for section in SOAP_SECTIONS
        }
        futures["patient_instructions"] = pool.submit(
            _instructions_chain,
            transcript,
            bundle,
            provider,
            model,
            verify_instructions,
            include_transcript_in_verification,
        )
        results: dict[str, tuple[str, list[TraceCall]]] = {}
        failures: dict[str, str] = {}
        for section in SECTIONS:
            try:
                results[section] = futures[section].result()
            except Exception as exc:
                failures[section] = str(exc)
    if failures:
        raise NoteGenerationError(failures)
    total_latency_ms = (time.perf_counter() - started) * 1000.0

    cc, hpi, marker_found = split_cc_hpi(results["hpi"][0])
    if not marker_found:
        logger.warning("no HPI marker in combined CC/HPI output for %s", transcript.visit_id)
    note = SoapNote(
        cc=cc,
        hpi=hpi,
        encounters_vitals=results["encounters_vitals"][0].strip(),
        assessment_plan=results["assessment_plan"][0].strip(),
    )
    instructions = results["patient_instructions"][0].strip()
    calls = tuple(call for section in SECTIONS for call in results[section][1])
    trace = GenerationTrace(
        trace_id=trace_id or f"trace-{uuid.uuid4().hex[:12]}",
        calls=calls,
        total_latency_ms=total_latency_ms,
    )
    return note, instructions, trace


def stitch_note(sections: dict) -> str:
    """Assemble the plain-text note in fixed header order.

    The encounters/vitals block is omitted entirely when empty; the
    Objective body is always empty.
    """
    hpi = (sections.get("hpi") or "").strip()
    assessment_plan = (sections.get("assessment_plan") or "").strip()
    if not hpi:
        raise StitchError("cannot stitch a note without an hpi section")
    if not assessment_plan:
        raise StitchError("cannot stitch a note without an assessment_plan section")
    cc = (sections.get("cc") or "").strip()
    encounters_vitals = (sections.get("encounters_vitals") or "").strip()

    lines = [SUBJECTIVE_HEADER]
    if cc:
        lines.append(f"{CC_PREFIX} {cc}")
    lines.append(f"{HPI_PREFIX} {hpi}")
    if encounters_vitals:
        lines.append("")
        lines.append(encounters_vitals)
    lines.append("")
    lines.append(OBJECTIVE_HEADER)
    lines.append("")
    lines.append(ASSESSMENT_PLAN_HEADER)
    lines.append(assessment_plan)
    return "\n".join(lines)


def render_note_document(note: SoapNote, patient_instructions: str = "") -> str:
    """Full note document: stitched SOAP note plus the instructions block."""
    text = stitch_note(
        {
            "cc": note.cc,
            "hpi": note.hpi,
            "encounters_vitals": note.encounters_vitals,
            "assessment_plan": note.assessment_plan,
        }
    )
    if patient_instructions.strip():
        text = f"{text}\n\n{INSTRUCTIONS_HEADER}\n{patient_instructions.strip()}"
    return text


_CAPS_HEADER = re.compile(r"^[A-Z][A-Z &/]{2,}$")
_LABEL_LINE = re.compile(r"^[A-Z][A-Za-z() &/]{0,30}:(\s|$)")


def extract_hpi(note_text: str) -> str:
    """Pull the HPI body out of a note for judging.

    Collects from the first "HPI:" line until a blank line, an all-caps
    header, or the next labelled line such as "PMH:" or "Plan:"; notes
    without the marker are returned whole.
    """
    lines = note_text.splitlines()
    start = None
    for i, line in enumerate(lines):
        if line.strip().startswith(HPI_PREFIX):
            start = i
            break
    if start is None:
        return note_text.strip()
    collected = [lines[start].strip()[len(HPI_PREFIX):].strip()]
    for line in lines[start + 1:]:
        stripped = line.strip()
        if not stripped or _CAPS_HEADER.match(stripped) or _LABEL_LINE.match(stripped):
            break
        collected.append(line)
    return "\n".join(collected).strip()
