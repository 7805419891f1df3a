"""Service configuration loaded from a JSON file."""
from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from pathlib import Path

__all__ = ["ConfigError", "ServiceConfig", "DEFAULT_BUCKET_EDGES_S"]

# 2-second steps covering the sub-minute latency range.
DEFAULT_BUCKET_EDGES_S = tuple(float(s) for s in range(2, 62, 2))


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8044
    routing_table_path: str = ""
    prompt_bundle_path: str = ""  # empty means the packaged default bundle
    store_path: str = "events.jsonl"
    trace_log_path: str = ""  # empty means "traces.jsonl" beside the store
    histogram_bucket_edges_s: tuple[float, ...] = DEFAULT_BUCKET_EDGES_S
    verify_instructions: bool = False
    judge_full_note: bool = False
    default_chat_model: str = ""
    default_transcription_model: str = ""

    def __post_init__(self):
        if not 0 < self.port < 65536:
            raise ConfigError(f"port out of range: {self.port}")
        edges = tuple(float(e) for e in self.histogram_bucket_edges_s)
        if not edges:
            raise ConfigError("histogram_bucket_edges_s must be non-empty")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ConfigError("histogram bucket edges must be strictly increasing")
        if edges[0] <= 0:
            raise ConfigError("histogram bucket edges must be positive")
        object.__setattr__(self, "histogram_bucket_edges_s", edges)
        if not self.routing_table_path:
            raise ConfigError("routing_table_path is required")
        if not self.store_path:
            raise ConfigError("store_path is required")

    @classmethod
    def from_dict(cls, payload: dict) -> "ServiceConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "histogram_bucket_edges_s" in payload:
            payload = dict(payload, histogram_bucket_edges_s=tuple(payload["histogram_bucket_edges_s"]))
        return cls(**payload)

    @classmethod
    def from_json_file(cls, path: str | Path) -> "ServiceConfig":
        path = Path(path)
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"unreadable config {path}: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        # Relative paths in the file resolve against the file's directory.
        return cls.from_dict(payload).resolved_against(path.parent)

    def resolved_against(self, base: Path) -> "ServiceConfig":
        def resolve(p: str) -> str:
            if not p or Path(p).is_absolute():
                return p
            return str(base / p)

        return replace(
            self,
            routing_table_path=resolve(self.routing_table_path),
            prompt_bundle_path=resolve(self.prompt_bundle_path),
            store_path=resolve(self.store_path),
            trace_log_path=resolve(self.trace_log_path),
        )

    @property
    def resolved_trace_log_path(self) -> str:
        if self.trace_log_path:
            return self.trace_log_path
        return str(Path(self.store_path).parent / "traces.jsonl")
