"""Shared on-disk conventions for trained models.

Every model in this package saves to the same shape of JSON envelope:
a format tag, an integer version, a config echo, and weight buffers as
Base64-encoded little-endian float64 (mirroring the recording codec's
byte-buffer convention, at double precision).
"""
from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Any

import numpy as np

FORMAT_TAG = "painface-model"
FORMAT_VERSION = 1


class EnvelopeError(ValueError):
    """Raised when a model file is not a valid envelope of the expected kind."""


def encode_f64(arr: np.ndarray) -> dict[str, Any]:
    """Pack an array as a Base64 little-endian float64 buffer with its shape."""
    a = np.asarray(arr, dtype="<f8", order="C")
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def decode_f64(blob: dict[str, Any]) -> np.ndarray:
    if not isinstance(blob, dict) or "shape" not in blob or "data" not in blob:
        raise EnvelopeError("weight buffer must be a {shape, data} object")
    try:
        raw = base64.b64decode(blob["data"], validate=True)
    except Exception as exc:
        raise EnvelopeError(f"invalid Base64 in weight buffer: {exc}") from exc
    shape = tuple(int(s) for s in blob["shape"])
    n = int(np.prod(shape)) if shape else 1
    if len(raw) != 8 * n:
        raise EnvelopeError(
            f"weight buffer length {len(raw)} does not match shape {shape}"
        )
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def wrap(kind: str, payload: dict[str, Any]) -> dict[str, Any]:
    """Build the envelope dict for a model payload."""
    return {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "kind": kind,
        **payload,
    }


def unwrap(doc: dict[str, Any], kind: str) -> dict[str, Any]:
    """Validate an envelope and return its payload (sans header keys)."""
    if not isinstance(doc, dict):
        raise EnvelopeError("model document must be a JSON object")
    if doc.get("format") != FORMAT_TAG:
        raise EnvelopeError(f"not a {FORMAT_TAG} document")
    if doc.get("version") != FORMAT_VERSION:
        raise EnvelopeError(f"unsupported envelope version {doc.get('version')!r}")
    if doc.get("kind") != kind:
        raise EnvelopeError(f"expected kind {kind!r}, found {doc.get('kind')!r}")
    return {k: v for k, v in doc.items() if k not in ("format", "version", "kind")}


def save_json(path: str | Path, doc: dict[str, Any]) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_json(path: str | Path) -> dict[str, Any]:
    return json.loads(Path(path).read_text())
