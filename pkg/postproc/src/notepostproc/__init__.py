"""Seq2seq post-processor that learns clinician edits to generated notes."""

from notepostproc.evaluate import (
    CompressionReport,
    EndpointError,
    embedding_f1,
    evaluate_compression,
)
from notepostproc.pairs import Pair, PairsError, load_pairs, write_pairs
from notepostproc.service import Postprocessor, create_app
from notepostproc.synthetic import DEFAULT_BOILERPLATE, make_toy_pairs
from notepostproc.training import ConfigError, TrainConfig, train

__all__ = [
    "CompressionReport",
    "ConfigError",
    "DEFAULT_BOILERPLATE",
    "EndpointError",
    "Pair",
    "PairsError",
    "Postprocessor",
    "TrainConfig",
    "create_app",
    "embedding_f1",
    "evaluate_compression",
    "load_pairs",
    "make_toy_pairs",
    "train",
    "write_pairs",
]
