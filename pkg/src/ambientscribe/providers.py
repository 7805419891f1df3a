"""Provider abstraction: routing, retries, and vendor HTTP adapters.

Logical model names resolve through a routing table to vendor endpoints or
to offline mock providers (URLs with the "mock:" scheme). Credentials are
referenced by environment-variable name and never stored inline.
"""
from __future__ import annotations

import json
import logging
import os
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol
from urllib.parse import parse_qs, urlparse

import httpx

from .corpus import Transcript, Utterance

logger = logging.getLogger(__name__)

__all__ = [
    "ProviderError",
    "RoutingError",
    "TransportError",
    "VendorError",
    "EmptyTranscriptError",
    "ChatMessage",
    "ChatRequest",
    "ChatResponse",
    "TranscriptionRequest",
    "RetryPolicy",
    "RouteEntry",
    "RoutingTable",
    "ResolvedCall",
    "route",
    "call_with_retry",
    "ChatProvider",
    "TranscriptionProvider",
    "RetryingChatProvider",
    "RetryingTranscriptionProvider",
    "HttpChatProvider",
    "HttpTranscriptionProvider",
    "HttpTextRewriteProvider",
    "build_chat_provider",
    "build_transcription_provider",
]

DEFAULT_RETRIES = 2
DEFAULT_BACKOFF_BASE_S = 1.0
DEFAULT_JITTER = 0.2
DEFAULT_TIMEOUT_S = 60.0

_ROLES = ("system", "user", "assistant")


class ProviderError(Exception):
    pass


class RoutingError(ProviderError):
    pass


class TransportError(ProviderError):
    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class VendorError(ProviderError):
    """Non-retryable vendor rejection (4xx or malformed response)."""

    def __init__(self, message: str, status_code: int | None = None):
        super().__init__(message)
        self.status_code = status_code


class EmptyTranscriptError(ProviderError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    request_tag: str = ""

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[0].role not in ("system", "user"):
            raise ValueError("first message must be system or user")

    def canonical_text(self) -> str:
        return "\n".join(f"{m.role}:{m.content}" for m in self.messages)


@dataclass(frozen=True)
class ChatResponse:
    content: str
    latency_ms: float
    provider_id: str


@dataclass(frozen=True)
class TranscriptionRequest:
    model: str
    audio_ref: str
    prompt: str = ""

    def __post_init__(self):
        if not self.audio_ref:
            raise ValueError("audio_ref must be non-empty")


@dataclass(frozen=True)
class RetryPolicy:
    retries: int = DEFAULT_RETRIES
    backoff_base_s: float = DEFAULT_BACKOFF_BASE_S
    jitter: float = DEFAULT_JITTER
    timeout_s: float = DEFAULT_TIMEOUT_S


@dataclass(frozen=True)
class RouteEntry:
    url: str
    credential_env: str | None = None
    timeout_s: float = DEFAULT_TIMEOUT_S
    retries: int = DEFAULT_RETRIES

    def policy(self) -> RetryPolicy:
        return RetryPolicy(retries=self.retries, timeout_s=self.timeout_s)


@dataclass(frozen=True)
class RoutingTable:
    entries: dict[str, RouteEntry]

    @classmethod
    def from_dict(cls, payload: dict) -> "RoutingTable":
        entries = {}
        for model, raw in payload.items():
            if "url" not in raw:
                raise RoutingError(f"routing entry for {model!r} lacks a url")
            entries[model] = RouteEntry(
                url=raw["url"],
                credential_env=raw.get("credential_env"),
                timeout_s=float(raw.get("timeout_s", DEFAULT_TIMEOUT_S)),
                retries=int(raw.get("retries", DEFAULT_RETRIES)),
            )
        return cls(entries=entries)

    @classmethod
    def from_json_file(cls, path: str | Path) -> "RoutingTable":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise RoutingError(f"unreadable routing table {path}: {exc}") from exc
        return cls.from_dict(payload)

    def resolve(self, model: str) -> RouteEntry:
        entry = self.entries.get(model)
        if entry is None:
            known = ", ".join(sorted(self.entries)) or "<none>"
            raise RoutingError(f"unknown model {model!r}; known models: {known}")
        return entry

    def model_names(self) -> list[str]:
        return sorted(self.entries)


@dataclass(frozen=True)
class ResolvedCall:
    request: ChatRequest | TranscriptionRequest
    url: str
    credential_env: str | None
    policy: RetryPolicy


def route(request: ChatRequest | TranscriptionRequest, table: RoutingTable) -> ResolvedCall:
    entry = table.resolve(request.model)
    return ResolvedCall(
        request=request,
        url=entry.url,
        credential_env=entry.credential_env,
        policy=entry.policy(),
    )


def call_with_retry(
    fn: Callable[[], object],
    policy: RetryPolicy,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
):
    """Run fn with exponential backoff; returns (result, attempts).

    Vendor 4xx errors are raised immediately; transport-level failures are
    retried until the budget is spent, then surfaced with the attempt count.
    """
    rng = rng or random.Random()
    attempts = policy.retries + 1
    last_error: Exception | None = None
    for attempt in range(1, attempts + 1):
        try:
            return fn(), attempt
        except VendorError:
            raise
        except (TransportError, httpx.TransportError, OSError) as exc:
            last_error = exc
            if attempt == attempts:
                break
            delay = policy.backoff_base_s * (2 ** (attempt - 1))
            delay *= 1.0 + policy.jitter * rng.uniform(-1.0, 1.0)
            logger.warning(
                "attempt %d/%d failed (%s); retrying in %.2fs", attempt, attempts, exc, delay
            )
            sleep(max(0.0, delay))
    raise TransportError(f"all {attempts} attempts failed: {last_error}", attempts=attempts)


class ChatProvider(Protocol):
    def complete_chat(self, request: ChatRequest) -> ChatResponse: ...


class TranscriptionProvider(Protocol):
    def transcribe(self, request: TranscriptionRequest) -> Transcript: ...


class RetryingChatProvider:
    """Wraps any chat provider with the retry policy; tracks attempt counts."""

    def __init__(
        self,
        inner: ChatProvider,
        policy: RetryPolicy,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.inner = inner
        self.policy = policy
        self.sleep = sleep
        self.rng = rng
        self.last_attempts = 0

    def complete_chat(self, request: ChatRequest) -> ChatResponse:
        response, attempts = call_with_retry(
            lambda: self.inner.complete_chat(request), self.policy, self.sleep, self.rng
        )
        self.last_attempts = attempts
        return response


class RetryingTranscriptionProvider:
    def __init__(
        self,
        inner: TranscriptionProvider,
        policy: RetryPolicy,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.inner = inner
        self.policy = policy
        self.sleep = sleep
        self.rng = rng
        self.last_attempts = 0

    def transcribe(self, request: TranscriptionRequest) -> Transcript:
        transcript, attempts = call_with_retry(
            lambda: self.inner.transcribe(request), self.policy, self.sleep, self.rng
        )
        self.last_attempts = attempts
        return transcript


def _auth_headers(credential_env: str | None) -> dict[str, str]:
    if not credential_env:
        return {}
    token = os.environ.get(credential_env)
    if not token:
        logger.warning("credential env var %s is unset", credential_env)
        return {}
    return {"Authorization": f"Bearer {token}"}


def _post_json(
    url: str,
    payload: dict,
    headers: dict[str, str],
    timeout_s: float,
    client: httpx.Client | None = None,
) -> dict:
    post = client.post if client is not None else httpx.post
    try:
        response = post(url, json=payload, headers=headers, timeout=timeout_s)
    except httpx.TimeoutException as exc:
        raise TransportError(f"timeout calling {url}: {exc}", attempts=1) from exc
    if 400 <= response.status_code < 500:
        raise VendorError(
            f"vendor rejected call to {url}: {response.status_code} {response.text[:200]}",
            status_code=response.status_code,
        )
    if response.status_code >= 500:
        raise TransportError(
            f"vendor error from {url}: {response.status_code}", attempts=1
        )
    try:
        return response.json()
    except json.JSONDecodeError as exc:
        raise VendorError(f"non-JSON response from {url}") from exc


class HttpChatProvider:
    """Chat-completions adapter: OpenAI-shaped request/response bodies."""

    def __init__(
        self,
        url: str,
        credential_env: str | None = None,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        client: httpx.Client | None = None,
    ):
        self.url = url
        self.credential_env = credential_env
        self.timeout_s = timeout_s
        self.client = client
        self.provider_id = f"http:{urlparse(url).netloc}"

    def complete_chat(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": request.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
        }
        started = time.perf_counter()
        body = _post_json(
            self.url, payload, _auth_headers(self.credential_env), self.timeout_s, self.client
        )
        latency_ms = (time.perf_counter() - started) * 1000.0
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise VendorError(f"malformed chat response from {self.url}") from exc
        if content is None:
            raise VendorError(f"null content from {self.url}")
        return ChatResponse(content=content, latency_ms=latency_ms, provider_id=self.provider_id)


class HttpTranscriptionProvider:
    """Transcription adapter for the internal proxy shape:
    POST {model, audio_ref, prompt} -> {"text": ...}.
    """

    def __init__(
        self,
        url: str,
        credential_env: str | None = None,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        client: httpx.Client | None = None,
    ):
        self.url = url
        self.credential_env = credential_env
        self.timeout_s = timeout_s
        self.client = client
        self.provider_id = f"http:{urlparse(url).netloc}"

    def transcribe(self, request: TranscriptionRequest) -> Transcript:
        payload = {"model": request.model, "audio_ref": request.audio_ref, "prompt": request.prompt}
        body = _post_json(
            self.url, payload, _auth_headers(self.credential_env), self.timeout_s, self.client
        )
        text = body.get("text", "")
        if not text.strip():
            raise EmptyTranscriptError(f"empty transcript from {self.url}")
        utterances = tuple(
            Utterance(speaker="unknown", text=line.strip())
            for line in text.splitlines()
            if line.strip()
        )
        visit_id = Path(request.audio_ref).parent.name or request.audio_ref
        return Transcript(
            visit_id=visit_id, utterances=utterances, source="machine", model_tag=request.model
        )


class HttpTextRewriteProvider:
    """Adapter for a post-processing endpoint: POST {text} -> {text}."""

    def __init__(
        self,
        url: str,
        credential_env: str | None = None,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        client: httpx.Client | None = None,
    ):
        self.url = url
        self.credential_env = credential_env
        self.timeout_s = timeout_s
        self.client = client

    def rewrite(self, text: str) -> str:
        body = _post_json(
            self.url, {"text": text}, _auth_headers(self.credential_env), self.timeout_s, self.client
        )
        out = body.get("text")
        if not out:
            raise VendorError(f"post-processor at {self.url} returned no text")
        return out


def _mock_params(url: str) -> tuple[str, dict[str, str]]:
    parsed = urlparse(url)
    kind = parsed.path or parsed.netloc
    params = {k: v[-1] for k, v in parse_qs(parsed.query).items()}
    return kind, params


def build_chat_provider(
    model: str,
    table: RoutingTable,
    sleep: Callable[[float], None] = time.sleep,
) -> ChatProvider:
    """Resolve a logical chat model to a retry-wrapped provider instance."""
    entry = table.resolve(model)
    if entry.url.startswith("mock:"):
        from .mockproviders import MockChatProvider

        kind, params = _mock_params(entry.url)
        if kind != "chat":
            raise RoutingError(f"model {model!r} routes to non-chat mock {entry.url!r}")
        playbook = {}
        playbook_path = params.get("playbook")
        if playbook_path:
            playbook = json.loads(Path(playbook_path).read_text(encoding="utf-8"))
        inner: ChatProvider = MockChatProvider(
            playbook=playbook,
            delay_ms=float(params.get("delay_ms", 0.0)),
            seed=int(params.get("seed", 0)),
            provider_id=f"mock-chat:{model}",
        )
    else:
        inner = HttpChatProvider(entry.url, entry.credential_env, entry.timeout_s)
    return RetryingChatProvider(inner, entry.policy(), sleep=sleep)


def build_transcription_provider(
    model: str,
    table: RoutingTable,
    sleep: Callable[[float], None] = time.sleep,
) -> TranscriptionProvider:
    entry = table.resolve(model)
    if entry.url.startswith("mock:"):
        from .mockproviders import MockTranscriptionProvider

        kind, params = _mock_params(entry.url)
        if kind != "transcription":
            raise RoutingError(f"model {model!r} routes to non-transcription mock {entry.url!r}")
        playbook = {}
        playbook_path = params.get("playbook")
        if playbook_path:
            playbook = json.loads(Path(playbook_path).read_text(encoding="utf-8"))
        prompted = params.get("prompted_corruption_rate")
        inner: TranscriptionProvider = MockTranscriptionProvider(
            playbook=playbook,
            corruption_rate=float(params.get("corruption_rate", 0.0)),
            prompted_corruption_rate=float(prompted) if prompted is not None else None,
            seed=int(params.get("seed", 0)),
            delay_ms=float(params.get("delay_ms", 0.0)),
        )
    else:
        inner = HttpTranscriptionProvider(entry.url, entry.credential_env, entry.timeout_s)
    return RetryingTranscriptionProvider(inner, entry.policy(), sleep=sleep)
