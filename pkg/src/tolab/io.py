"""Plain-text artifacts: field files, thin-trace CSV and JSON helpers."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .grid import Field, GridSpec, build_grid

FIELD_MAGIC = "tol-field v1"


class FieldFormatError(ValueError):
    pass


def format_field(f: Field) -> str:
    spec = f.grid.spec
    dims = "x".join(str(k) for k in spec.cells_per_axis)
    header = f"{FIELD_MAGIC} n={spec.dimension} dims={dims} a={spec.a!r} L={spec.extent!r}"
    if spec.grading_ratio != 1.0:
        header += f" grading={spec.grading_ratio!r}"
    body = "\n".join(repr(float(v)) for v in f.values)
    return header + "\n" + body + "\n"


def parse_field(text: str) -> Field:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(FIELD_MAGIC):
        raise FieldFormatError("missing 'tol-field v1' header")
    kv = dict(tok.split("=", 1) for tok in lines[0][len(FIELD_MAGIC):].split())
    try:
        n = int(kv["n"])
        cells = tuple(int(k) for k in kv["dims"].split("x"))
        spec = GridSpec(n, cells, float(kv["a"]), float(kv["L"]), float(kv.get("grading", 1.0)))
    except KeyError as exc:
        raise FieldFormatError(f"header lacks {exc.args[0]!r}") from None
    vals = np.array([float(s) for s in lines[1:] if s.strip()])
    return Field(build_grid(spec), vals)


def write_field(f: Field, path) -> Path:
    path = Path(path)
    path.write_text(format_field(f))
    return path


def read_field(path) -> Field:
    return parse_field(Path(path).read_text())


def write_thin_csv(f: Field, path) -> Path:
    """One row per bottom-layer node: x' coordinates then the trace value."""
    g = f.grid
    x = g.coords[g.bottom_layer][:, :-1]
    cols = [f"x{i + 1}" for i in range(g.n - 1)] + ["u"]
    rows = np.column_stack([x, f.thin_trace])
    lines = [",".join(cols)] + [",".join(repr(float(v)) for v in row) for row in rows]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True)


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(dumps(obj) + "\n")
    return path


def config_hash(cfg) -> str:
    blob = json.dumps(_jsonable(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
