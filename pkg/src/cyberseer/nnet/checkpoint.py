"""JSON checkpoints with bit-exact parameter values."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import CorruptCheckpointError, ShapeError, VersionMismatchError
from .graph import ModelGraph

FORMAT_VERSION = 1


def _render(values: np.ndarray) -> list[str]:
    # 17 significant digits round-trip every float64 exactly
    return [format(float(v), ".17g") for v in values.reshape(-1)]


def checkpoint_dict(graph: ModelGraph) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "graph": graph.describe(),
        "params": {
            name: {"shape": list(p.shape), "values": _render(p)}
            for name, p in graph.params.items()
        },
    }


def save_checkpoint(graph: ModelGraph, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_dict(graph), indent=1) + "\n", encoding="utf-8")
    return path


def graph_from_checkpoint(doc: dict) -> ModelGraph:
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise CorruptCheckpointError("not a checkpoint document")
    if doc["format_version"] != FORMAT_VERSION:
        raise VersionMismatchError(
            f"checkpoint format {doc['format_version']!r}, this build reads {FORMAT_VERSION}"
        )
    try:
        params = {
            name: np.array([float(v) for v in entry["values"]], dtype=np.float64).reshape(
                entry["shape"]
            )
            for name, entry in doc["params"].items()
        }
        return ModelGraph.from_description(doc["graph"], params)
    except (KeyError, TypeError, ValueError, ShapeError) as exc:
        raise CorruptCheckpointError(f"malformed checkpoint: {exc}") from None


def load_checkpoint(path) -> ModelGraph:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: {exc}") from None
    return graph_from_checkpoint(doc)
