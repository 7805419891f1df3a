"""Request and response bodies for the HTTP endpoints."""
from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..eventstore import SECTION_NAMES

__all__ = [
    "NoteOptions",
    "CreateNoteRequest",
    "SoapNoteBody",
    "CreateNoteResponse",
    "SubmissionRequest",
    "SubmissionResponse",
    "ErrorBody",
]


class NoteOptions(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    model: str = ""
    transcription_model: str = ""
    transcription_prompt: str = ""
    verify_instructions: bool | None = None
    consent_recorded: bool = False


class CreateNoteRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    visit_id: str = Field(min_length=1)
    transcript_text: str | None = None
    audio_ref: str | None = None
    options: NoteOptions = NoteOptions()

    @model_validator(mode="after")
    def _exactly_one_input(self):
        if (self.transcript_text is None) == (self.audio_ref is None):
            raise ValueError("provide exactly one of transcript_text or audio_ref")
        return self


class SoapNoteBody(BaseModel):
    cc: str
    hpi: str
    encounters_vitals: str
    objective: str
    assessment_plan: str


class CreateNoteResponse(BaseModel):
    note_id: str
    visit_id: str
    soap_note: SoapNoteBody
    patient_instructions: str
    note_text: str
    trace_id: str
    latency_ms: float
    consent_recorded: bool


class SubmissionRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sections: dict[str, str]

    @model_validator(mode="after")
    def _known_sections_only(self):
        unknown = sorted(set(self.sections) - set(SECTION_NAMES))
        if unknown:
            raise ValueError(f"unknown sections: {', '.join(unknown)}")
        if not self.sections:
            raise ValueError("sections must be non-empty")
        return self


class SubmissionResponse(BaseModel):
    note_id: str
    edit_rate_per_section: dict[str, float]


class ErrorBody(BaseModel):
    code: str
    message: str
    detail: dict | list | str | None = None
