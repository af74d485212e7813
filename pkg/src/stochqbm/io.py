"""Plain-text and binary serialization helpers.

All floats are written with 17 significant digits so that a write/read round
trip is lossless, and every text file uses LF line endings.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

FLOAT_FMT = "%.17g"


def fmt(value) -> str:
    return FLOAT_FMT % value


def write_matrix(path, values, header: dict) -> None:
    """Write ``values`` as whitespace-separated rows under a one-line header.

    The header carries ``n_points t_start t_end kind`` followed by optional
    ``key=value`` tags (for example ``causality=retarded``).
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    extras = [f"{k}={v}" for k, v in header.items() if k not in ("t_start", "t_end", "kind")]
    head = " ".join([str(n), fmt(header["t_start"]), fmt(header["t_end"]), header["kind"], *extras])
    lines = [head]
    for row in values:
        lines.append(" ".join(FLOAT_FMT % v for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")


def read_matrix(path):
    """Inverse of :func:`write_matrix`; returns ``(header_dict, values)``."""
    text = Path(path).read_text(encoding="ascii").splitlines()
    if not text:
        raise InvalidArgumentError(f"{path}: empty matrix file")
    parts = text[0].split()
    if len(parts) < 4:
        raise InvalidArgumentError(f"{path}: malformed header {text[0]!r}")
    header = {
        "n_points": int(parts[0]),
        "t_start": float(parts[1]),
        "t_end": float(parts[2]),
        "kind": parts[3],
    }
    for tag in parts[4:]:
        key, _, val = tag.partition("=")
        header[key] = val
    rows = [line.split() for line in text[1:] if line.strip()]
    values = np.array(rows, dtype=float)
    n = header["n_points"]
    if values.shape != (n, n):
        raise InvalidArgumentError(f"{path}: expected {n}x{n} matrix, got {values.shape}")
    return header, values


def write_csv(path, columns: dict) -> None:
    """Write equal-length columns as comma-separated text with a header row."""
    names = list(columns)
    cols = [np.asarray(columns[k]) for k in names]
    n = len(cols[0]) if cols else 0
    lines = [",".join(names)]
    for i in range(n):
        cells = []
        for c in cols:
            v = c[i]
            if isinstance(v, (np.integer, int, np.bool_, bool)):
                cells.append(str(int(v)))
            else:
                cells.append(FLOAT_FMT % v)
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")


def read_csv(path) -> dict:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    names = lines[0].split(",")
    data = np.array([[float(c) for c in line.split(",")] for line in lines[1:]], dtype=float)
    data = data.reshape(-1, len(names))
    return {name: data[:, i] for i, name in enumerate(names)}


def write_binary(path, arrays: dict, meta: dict) -> None:
    """Binary container: one JSON header line, then raw little-endian float64 blocks.

    The header lists each array's name and shape in order, so the file can be
    read back without numpy-specific formats and is byte-stable across runs.
    """
    layout = []
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        layout.append({"name": name, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    head = dict(meta)
    head["arrays"] = layout
    with open(path, "wb") as fh:
        fh.write(json.dumps(head, sort_keys=True).encode("utf-8") + b"\n")
        for blob in blobs:
            fh.write(blob)


def read_binary(path):
    with open(path, "rb") as fh:
        head = json.loads(fh.readline().decode("utf-8"))
        out = {}
        for entry in head["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            out[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return head, out


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
