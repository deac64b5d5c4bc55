"""JSON helpers: matrices as row-major arrays with explicit dimensions."""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from ._errors import ValidationError


def matrix_to_json(a) -> dict:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return {
        "rows": int(a.shape[0]),
        "cols": int(a.shape[1]),
        "data": [float(x) for x in a.ravel(order="C")],
    }


def matrix_from_json(d: dict) -> np.ndarray:
    rows, cols, data = d["rows"], d["cols"], d["data"]
    if len(data) != rows * cols:
        raise ValidationError(f"matrix payload has {len(data)} entries, expected {rows * cols}")
    return np.asarray(data, dtype=float).reshape(rows, cols)


def dumps(obj) -> str:
    """Canonical JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(obj))


def load_schema(name: str) -> dict:
    """Load one of the shipped JSON schemas (``fit``, ``replication``, ...)."""
    text = resources.files("dynafactor.schemas").joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)
