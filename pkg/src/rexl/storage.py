"""File-based storage helpers for rexl artifacts.

Provides atomic JSON save/load, versioned artifact loading, canonical
hashing of configurations and the layer encoding shared by classifier and
agent weight files.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import FormatError, FormatVersionError


def _ensure_parent(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)


def _write_atomic(path: Path, text: str) -> None:
    _ensure_parent(path)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            try:
                os.remove(tmp)
            except OSError:
                pass


def save_json(path: Path | str, obj: Any, *, indent: int = 2) -> None:
    """Atomically save `obj` as JSON to `path`.

    The write goes to a temporary file in the same directory which is then
    renamed into place, so readers never observe a partial file. Keys are
    sorted so identical objects always produce identical bytes.
    """
    text = json.dumps(obj, indent=indent, ensure_ascii=False, sort_keys=True)
    _write_atomic(Path(path), text + "\n")


def load_json(path: Path | str, default: Optional[Any] = None) -> Any:
    """Load JSON from `path`. Return `default` if file does not exist."""
    p = Path(path)
    if not p.exists():
        return default
    with p.open("r", encoding="utf-8") as f:
        return json.load(f)


def load_versioned(path: Path | str, expected_format: str) -> Dict[str, Any]:
    """Load a JSON artifact and check its ``format`` field.

    Raises FileNotFoundError for a missing file, FormatError for anything
    that does not parse as a JSON object and FormatVersionError when the
    format string differs from `expected_format`.
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"artifact not found: {p}")
    try:
        with p.open("r", encoding="utf-8") as f:
            obj = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{p}: not valid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise FormatError(f"{p}: expected a JSON object")
    found = obj.get("format")
    if found != expected_format:
        raise FormatVersionError(
            f"{p}: expected format {expected_format!r}, found {found!r}"
        )
    return obj


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(obj: Any) -> str:
    """SHA-256 hex digest of the canonical JSON form of `obj`."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def encode_layers(layers: Iterable[Tuple[np.ndarray, np.ndarray]]) -> List[Dict[str, Any]]:
    """Encode (weight, bias) pairs as ``{"rows","cols","w","b"}`` records.

    Weights are stored row-major; floats keep full precision because the
    JSON encoder writes the shortest round-tripping representation.
    """
    out = []
    for w, b in layers:
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        out.append(
            {
                "rows": int(w.shape[0]),
                "cols": int(w.shape[1]),
                "w": [float(x) for x in w.ravel()],
                "b": [float(x) for x in b.ravel()],
            }
        )
    return out


def decode_layers(records: Sequence[Any]) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Inverse of `encode_layers`; raises FormatError on malformed records."""
    if not isinstance(records, list) or not records:
        raise FormatError("layers must be a non-empty list")
    layers = []
    for i, rec in enumerate(records):
        try:
            rows, cols = int(rec["rows"]), int(rec["cols"])
            w = np.asarray(rec["w"], dtype=np.float64)
            b = np.asarray(rec["b"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"layer {i}: malformed record ({exc})") from exc
        if w.size != rows * cols or b.size != cols:
            raise FormatError(
                f"layer {i}: expected {rows}x{cols} weights and {cols} biases, "
                f"found {w.size} and {b.size}"
            )
        layers.append((w.reshape(rows, cols), b))
    return layers
