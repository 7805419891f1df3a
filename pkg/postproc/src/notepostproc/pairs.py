"""Fine-tune pair file handling.

The pairs file is the note workbench's export format: one JSON object per
line with "source" (generated section text) and "target" (the clinician's
edited version). This file format is the only coupling to the workbench;
nothing here imports it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

__all__ = ["Pair", "PairsError", "load_pairs", "write_pairs"]


class PairsError(ValueError):
    pass


@dataclass(frozen=True)
class Pair:
    source: str
    target: str


def load_pairs(path: str | Path) -> list[Pair]:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise PairsError(f"unreadable pairs file {path}: {exc}") from exc
    pairs: list[Pair] = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise PairsError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(record, dict) or not {"source", "target"} <= set(record):
            raise PairsError(f'{path}:{lineno}: expected "source" and "target" keys')
        source = str(record["source"]).strip()
        target = str(record["target"]).strip()
        if not source:
            raise PairsError(f"{path}:{lineno}: empty source")
        pairs.append(Pair(source=source, target=target))
    if not pairs:
        raise PairsError(f"pairs file {path} holds no pairs")
    return pairs


def write_pairs(path: str | Path, pairs) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps({"source": pair.source, "target": pair.target}) + "\n")
