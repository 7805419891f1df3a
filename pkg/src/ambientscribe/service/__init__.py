"""HTTP orchestration service: note generation, submission capture, and
metrics over the event store."""
from .app import create_app
from .config import DEFAULT_BUCKET_EDGES_S, ServiceConfig
from .metrics import LatencyHistogram

__all__ = ["create_app", "ServiceConfig", "DEFAULT_BUCKET_EDGES_S", "LatencyHistogram"]
