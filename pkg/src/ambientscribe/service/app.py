"""FastAPI application wiring corpus, pipeline, providers, and metrics.

Note generation is all-or-nothing: a generated event is stored only for 200
responses, and the latency histogram counts exactly those notes. Latencies
are replayed from the trace log on startup so restarts keep the metrics.
"""
from __future__ import annotations

import json
import logging
import threading
import uuid
from datetime import datetime, timezone
from pathlib import Path

import httpx
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from ..corpus import CorpusError, parse_human_transcript
from ..eventstore import SECTION_NAMES, NoteEvent, NoteEventStore, StoreError
from ..pipeline import (
    NoteGenerationError,
    PipelineError,
    PromptBundle,
    generate_soap_note,
    render_note_document,
)
from ..providers import (
    ProviderError,
    RoutingError,
    RoutingTable,
    TranscriptionRequest,
    build_chat_provider,
    build_transcription_provider,
)
from ..textmetrics import char_edit_rate, quantile, summarize_distribution
from .config import ServiceConfig
from .metrics import LatencyHistogram
from .schemas import (
    CreateNoteRequest,
    CreateNoteResponse,
    SoapNoteBody,
    SubmissionRequest,
    SubmissionResponse,
)

logger = logging.getLogger(__name__)

__all__ = ["create_app", "ServiceError"]

HEALTH_PROBE_TIMEOUT_S = 1.0


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str, detail=None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail


def _error_response(status: int, code: str, message: str, detail=None) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"code": code, "message": message, "detail": detail},
    )


class ServiceState:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self.table = RoutingTable.from_json_file(config.routing_table_path)
        if config.prompt_bundle_path:
            self.bundle = PromptBundle.from_dir(config.prompt_bundle_path)
        else:
            self.bundle = PromptBundle.default()
        self.store = NoteEventStore(config.store_path)
        self.histogram = LatencyHistogram(config.histogram_bucket_edges_s)
        self.latencies_s: list[float] = []
        self.trace_log_path = Path(config.resolved_trace_log_path)
        self._latency_lock = threading.Lock()
        self._trace_lock = threading.Lock()
        self._submission_lock = threading.Lock()
        self._chat_providers: dict = {}
        self._transcription_providers: dict = {}
        self._replay_trace_log()

    def _replay_trace_log(self) -> None:
        if not self.trace_log_path.is_file():
            return
        for line in self.trace_log_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            seconds = float(record["latency_ms"]) / 1000.0
            self.histogram.observe(seconds)
            self.latencies_s.append(seconds)

    def record_latency(self, latency_ms: float) -> None:
        seconds = latency_ms / 1000.0
        self.histogram.observe(seconds)
        with self._latency_lock:
            self.latencies_s.append(seconds)

    def latency_sample(self) -> list[float]:
        with self._latency_lock:
            return list(self.latencies_s)

    def append_trace(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        with self._trace_lock:
            with self.trace_log_path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")

    def chat_provider(self, model: str):
        if model not in self._chat_providers:
            self._chat_providers[model] = build_chat_provider(model, self.table)
        return self._chat_providers[model]

    def transcription_provider(self, model: str):
        if model not in self._transcription_providers:
            self._transcription_providers[model] = build_transcription_provider(model, self.table)
        return self._transcription_providers[model]

    def submission_lock(self) -> threading.Lock:
        return self._submission_lock


def _section_edit_rate(generated: str, submitted: str) -> float:
    if not generated:
        return 0.0 if not submitted else 1.0
    return char_edit_rate(generated, submitted)


def _resolve_transcript(state: ServiceState, body: CreateNoteRequest):
    if body.transcript_text is not None:
        try:
            return parse_human_transcript(body.transcript_text, body.visit_id)
        except CorpusError as exc:
            raise ServiceError(400, "bad_request", f"unparseable transcript: {exc}")
    model = body.options.transcription_model or state.config.default_transcription_model
    if not model:
        raise ServiceError(400, "bad_request", "no transcription model configured")
    try:
        provider = state.transcription_provider(model)
    except RoutingError as exc:
        raise ServiceError(404, "unknown_model", str(exc))
    request = TranscriptionRequest(
        model=model, audio_ref=body.audio_ref, prompt=body.options.transcription_prompt
    )
    try:
        return provider.transcribe(request)
    except ProviderError as exc:
        raise ServiceError(502, "provider_failure", f"transcription failed: {exc}")


def create_app(config: ServiceConfig) -> FastAPI:
    state = ServiceState(config)
    app = FastAPI(title="ambientscribe", version="0.1.0")
    app.state.scribe = state

    @app.exception_handler(RequestValidationError)
    async def handle_validation(request: Request, exc: RequestValidationError):
        detail = [
            {"loc": [str(part) for part in err.get("loc", [])], "msg": err.get("msg", "")}
            for err in exc.errors()
        ]
        return _error_response(400, "bad_request", "invalid request body", detail)

    @app.exception_handler(ServiceError)
    async def handle_service_error(request: Request, exc: ServiceError):
        return _error_response(exc.status, exc.code, exc.message, exc.detail)

    @app.exception_handler(Exception)
    async def handle_unexpected(request: Request, exc: Exception):
        logger.exception("unhandled error on %s", request.url.path)
        return _error_response(500, "internal", "internal error")

    @app.post("/v1/notes", response_model=CreateNoteResponse)
    def create_note(body: CreateNoteRequest) -> CreateNoteResponse:
        model = body.options.model or config.default_chat_model
        if not model:
            raise ServiceError(400, "bad_request", "no chat model configured")
        try:
            provider = state.chat_provider(model)
        except RoutingError as exc:
            raise ServiceError(404, "unknown_model", str(exc))

        transcript = _resolve_transcript(state, body)
        verify_instructions = body.options.verify_instructions
        if verify_instructions is None:
            verify_instructions = config.verify_instructions

        try:
            note, instructions, trace = generate_soap_note(
                transcript,
                state.bundle,
                provider,
                model=model,
                verify_instructions=verify_instructions,
            )
        except NoteGenerationError as exc:
            raise ServiceError(
                502, "provider_failure", "note generation failed", detail=exc.failures
            )
        except PipelineError as exc:
            raise ServiceError(400, "bad_request", str(exc))

        note_id = f"{body.visit_id}-{uuid.uuid4().hex[:8]}"
        sections = {
            "cc": note.cc,
            "hpi": note.hpi,
            "encounters_vitals": note.encounters_vitals,
            "objective": note.objective,
            "assessment_plan": note.assessment_plan,
            "patient_instructions": instructions,
        }
        event = NoteEvent(
            note_id=note_id,
            visit_id=body.visit_id,
            kind="generated",
            sections=sections,
            timestamp=datetime.now(timezone.utc),
            trace_id=trace.trace_id,
        )
        try:
            state.store.append(event)
        except (StoreError, OSError) as exc:
            raise ServiceError(503, "store_unavailable", f"could not persist note: {exc}")

        state.record_latency(trace.total_latency_ms)
        try:
            state.append_trace(
                {
                    "trace_id": trace.trace_id,
                    "note_id": note_id,
                    "visit_id": body.visit_id,
                    "latency_ms": trace.total_latency_ms,
                    "consent_recorded": body.options.consent_recorded,
                    "calls": [c.to_dict() for c in trace.calls],
                }
            )
        except OSError:
            logger.exception("trace log write failed for %s", note_id)

        return CreateNoteResponse(
            note_id=note_id,
            visit_id=body.visit_id,
            soap_note=SoapNoteBody(
                cc=note.cc,
                hpi=note.hpi,
                encounters_vitals=note.encounters_vitals,
                objective=note.objective,
                assessment_plan=note.assessment_plan,
            ),
            patient_instructions=instructions,
            note_text=render_note_document(note, instructions),
            trace_id=trace.trace_id,
            latency_ms=trace.total_latency_ms,
            consent_recorded=body.options.consent_recorded,
        )

    @app.post("/v1/notes/{note_id}/submission", response_model=SubmissionResponse)
    def submit_note(note_id: str, body: SubmissionRequest) -> SubmissionResponse:
        with state.submission_lock():
            generated = state.store.latest_of_kind(note_id, "generated")
            if generated is None:
                raise ServiceError(404, "unknown_note", f"no generated note {note_id!r}")
            if state.store.latest_of_kind(note_id, "submitted") is not None:
                raise ServiceError(409, "already_submitted", f"note {note_id!r} already submitted")

            submitted_sections = {**generated.sections, **body.sections}
            edit_rates = {
                section: _section_edit_rate(
                    generated.sections.get(section, ""), submitted_sections.get(section, "")
                )
                for section in SECTION_NAMES
            }
            event = NoteEvent(
                note_id=note_id,
                visit_id=generated.visit_id,
                kind="submitted",
                sections=submitted_sections,
                timestamp=datetime.now(timezone.utc),
                trace_id=generated.trace_id,
            )
            try:
                state.store.append(event)
            except (StoreError, OSError) as exc:
                raise ServiceError(503, "store_unavailable", f"could not persist submission: {exc}")
        return SubmissionResponse(note_id=note_id, edit_rate_per_section=edit_rates)

    @app.get("/v1/metrics/summary")
    def metrics_summary() -> dict:
        sample = state.latency_sample()
        latency = {
            "n": len(sample),
            "p50_s": quantile(sample, 0.5) if sample else 0.0,
            "histogram": state.histogram.to_dict(),
        }

        # Edit-rate and length stats come from the store, so they survive
        # restarts without any extra bookkeeping.
        rates: dict[str, list[float]] = {section: [] for section in SECTION_NAMES}
        gen_lengths: dict[str, list[int]] = {section: [] for section in SECTION_NAMES}
        sub_lengths: dict[str, list[int]] = {section: [] for section in SECTION_NAMES}
        submitted_notes = 0
        for note_id in state.store.note_ids():
            generated = state.store.latest_of_kind(note_id, "generated")
            submitted = state.store.latest_of_kind(note_id, "submitted")
            if generated is None or submitted is None:
                continue
            submitted_notes += 1
            for section in SECTION_NAMES:
                gen_text = generated.sections.get(section, "")
                sub_text = submitted.sections.get(section, "")
                rates[section].append(_section_edit_rate(gen_text, sub_text))
                gen_lengths[section].append(len(gen_text))
                sub_lengths[section].append(len(sub_text))

        edit_rate_per_section = {}
        length_per_section = {}
        for section in SECTION_NAMES:
            values = rates[section]
            all_empty = not any(gen_lengths[section]) and not any(sub_lengths[section])
            if not values or all_empty:
                continue
            summary = summarize_distribution(values)
            edit_rate_per_section[section] = {
                "mean": summary.mean,
                "stdev": summary.stdev,
                "n": summary.n,
            }
            gen_mean = sum(gen_lengths[section]) / len(gen_lengths[section])
            sub_mean = sum(sub_lengths[section]) / len(sub_lengths[section])
            length_per_section[section] = {
                "generated_mean_chars": gen_mean,
                "submitted_mean_chars": sub_mean,
                "percent_change": (
                    100.0 * (sub_mean - gen_mean) / gen_mean if gen_mean else None
                ),
            }

        return {
            "latency": latency,
            "edit_rate": {
                "per_section": edit_rate_per_section,
                "notes_submitted": submitted_notes,
            },
            "length": {"per_section": length_per_section},
        }

    @app.get("/healthz")
    def healthz() -> dict:
        reachability = {}
        for model in state.table.model_names():
            entry = state.table.resolve(model)
            if entry.url.startswith("mock:"):
                reachability[model] = "ok"
                continue
            try:
                # Any HTTP answer proves the endpoint is reachable.
                httpx.get(entry.url, timeout=HEALTH_PROBE_TIMEOUT_S)
                reachability[model] = "ok"
            except httpx.HTTPError as exc:
                reachability[model] = f"unreachable: {type(exc).__name__}"
        status = "ok" if all(v == "ok" for v in reachability.values()) else "degraded"
        return {"status": status, "provider_reachability": reachability}

    return app
