"""CSV/JSON artifacts and run manifests.

Numbers are always written with 17 significant digits so that files
round-trip exactly, and JSON is written with sorted keys and no
timestamps so identical runs give byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError

__all__ = [
    "SCHEMA_VERSION", "write_matrix_csv", "read_matrix_csv", "write_trajectory_csv",
    "read_trajectory_csv", "write_json", "read_json", "sha256_file", "write_manifest",
    "manifest_path",
]

SCHEMA_VERSION = 1
FLOAT_FMT = "%.17g"


def _clean(obj):
    """Make ``obj`` JSON-safe: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if callable(obj):
        return None
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"file {str(path)!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{str(path)!r} is not valid JSON: {exc}") from None


def write_matrix_csv(path, M, header: Optional[Sequence[str]] = None) -> Path:
    """Write a 2-D array as comma-separated rows, optionally with a header line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with path.open("w") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in M:
            fh.write(",".join(FLOAT_FMT % v for v in row) + "\n")
    return path


def _read_rows(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file {str(path)!r} not found")
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise ConfigError(f"{str(path)!r} is empty")
    header = None
    first = lines[0].split(",")
    try:
        [float(v) for v in first]
    except ValueError:
        header = [v.strip() for v in first]
        lines = lines[1:]
    try:
        rows = [[float(v) for v in ln.split(",")] for ln in lines]
    except ValueError as exc:
        raise ConfigError(f"{str(path)!r}: bad number ({exc})") from None
    if len({len(r) for r in rows}) > 1:
        raise ConfigError(f"{str(path)!r}: rows have different lengths")
    return header, np.array(rows, dtype=float).reshape(len(rows), -1)


def read_matrix_csv(path) -> np.ndarray:
    """Read a headerless (or headed) numeric CSV into a 2-D array."""
    return _read_rows(path)[1]


def write_trajectory_csv(path, t, X, U, Y, state_prefix: str = "x") -> Path:
    """Columns ``t, x1..xn, u1..um, y1..yp``."""
    X, U, Y = (np.asarray(a, dtype=float) for a in (X, U, Y))
    header = (["t"] + [f"{state_prefix}{i + 1}" for i in range(X.shape[1])]
              + [f"u{i + 1}" for i in range(U.shape[1])] + [f"y{i + 1}" for i in range(Y.shape[1])])
    return write_matrix_csv(path, np.column_stack([np.asarray(t, dtype=float), X, U, Y]), header)


def read_trajectory_csv(path) -> dict:
    """Read a trajectory CSV into ``{"t", "X", "U", "Y", "columns"}``."""
    header, data = _read_rows(path)
    if header is None or not header or header[0] != "t":
        raise ConfigError(f"{str(path)!r} is not a trajectory CSV (first column must be 't')")
    out = {"t": data[:, 0], "columns": header}
    for key, letter in (("U", "u"), ("Y", "y")):
        cols = [j for j, h in enumerate(header) if h.startswith(letter) and h[1:].isdigit()]
        out[key] = data[:, cols]
    state = [j for j, h in enumerate(header[1:], start=1)
             if not (h[:1] in "uy" and h[1:].isdigit())]
    out["X"] = data[:, state]
    return out


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(primary) -> Path:
    """``<stem>.manifest.json`` next to the primary artifact."""
    primary = Path(primary)
    return primary.with_name(primary.stem + ".manifest.json")


def write_manifest(primary, info: Mapping, artifacts: Sequence) -> Path:
    """Write the run manifest for an output set and return its path.

    Artifact paths are stored relative to the manifest directory together
    with their SHA-256 hashes.
    """
    path = manifest_path(primary)
    base = path.parent.resolve()
    hashes = {}
    for a in artifacts:
        a = Path(a).resolve()
        try:
            key = str(a.relative_to(base))
        except ValueError:
            key = str(a)
        hashes[key] = sha256_file(a)
    doc = dict(info)
    doc["schema_version"] = SCHEMA_VERSION
    doc["artifacts"] = hashes
    return write_json(path, doc)
