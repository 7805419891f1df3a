"""Ambient-scribe note generation pipeline and offline evaluation workbench."""

__version__ = "0.1.0"
