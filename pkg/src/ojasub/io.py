"""Matrix and system file I/O, plus deterministic JSON/CSV writers."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse

from .modred import FrequencyResponse, LtiSystem

MATRIX_SUFFIXES = (".mtx", ".csv", ".txt")


def read_matrix(path) -> np.ndarray:
    """Read a Matrix Market (``.mtx``) or headerless CSV (``.csv``/``.txt``) file as a 2-D float array."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".mtx":
        data = scipy.io.mmread(str(path))
        if scipy.sparse.issparse(data):
            data = data.toarray()
        arr = np.asarray(data, dtype=float)
    elif suffix in (".csv", ".txt"):
        arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    else:
        raise ValueError(f"unsupported matrix format {suffix!r} (use .mtx or .csv)")
    if arr.ndim != 2:
        arr = np.atleast_2d(arr)
    return arr


def write_matrix_csv(path, M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="") as fh:
        for row in M:
            fh.write(",".join(format_float(x) for x in row) + "\n")


def _find_block(directory: Path, name: str) -> Path:
    for suffix in MATRIX_SUFFIXES:
        cand = directory / f"{name}{suffix}"
        if cand.is_file():
            return cand
    raise FileNotFoundError(f"no {name}.mtx or {name}.csv in {directory}")


def system_paths(path) -> dict[str, Path]:
    """Resolve the ``A``/``B``/``C`` files of a system directory or JSON manifest."""
    path = Path(path)
    if path.is_dir():
        return {k: _find_block(path, k) for k in ("A", "B", "C")}
    if path.suffix.lower() == ".json":
        with open(path) as fh:
            manifest = json.load(fh)
        missing = [k for k in ("A", "B", "C") if k not in manifest]
        if missing:
            raise ValueError(f"system manifest lacks {missing}")
        return {k: (path.parent / manifest[k]) for k in ("A", "B", "C")}
    raise FileNotFoundError(f"{path} is neither a directory nor a JSON manifest")


def load_system(path) -> tuple[LtiSystem, dict[str, Path]]:
    paths = system_paths(path)
    mats = {k: read_matrix(p) for k, p in paths.items()}
    return LtiSystem(mats["A"], mats["B"], mats["C"]), paths


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def format_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return _to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or obj is True or obj is False:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return "null"
        text = format(obj, ".17g")
        return text if any(c in text for c in ".en") else text + ".0"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj, indent: int = 2) -> str:
    """JSON text with every float written to 17 significant digits (non-finite as ``null``)."""
    return _encode(_to_jsonable(obj), indent, 0) + "\n"


def write_json(path, obj) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(dumps_json(obj))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_float(x) for x in row) + "\n")


def bode_columns(resp: FrequencyResponse) -> tuple[list[str], np.ndarray]:
    """Header and data of the Bode CSV: ``omega``, then magnitudes, then phases, entries row-major."""
    N, p, m = resp.values.shape
    idx = [(i, j) for i in range(p) for j in range(m)]
    header = ["omega"] + [f"mag_db_{i + 1}{j + 1}" for i, j in idx] + [f"phase_deg_{i + 1}{j + 1}" for i, j in idx]
    mag = resp.magnitude_db.reshape(N, p * m)
    ph = resp.phase_deg.reshape(N, p * m)
    return header, np.column_stack([resp.frequencies, mag, ph])


def write_bode(path, resp: FrequencyResponse, metadata: dict | None = None) -> Path:
    """Write the Bode CSV and a JSON sidecar next to it; returns the sidecar path."""
    path = Path(path)
    header, data = bode_columns(resp)
    write_csv(path, header, data)
    sidecar = path.with_suffix(".json")
    meta = {
        "label": resp.label,
        "outputs": int(resp.values.shape[1]),
        "inputs": int(resp.values.shape[2]),
        "points": int(len(resp.frequencies)),
        "pole_frequencies": resp.frequencies[resp.pole_flags].tolist(),
        "zero_transfer_function": resp.is_zero,
    }
    meta.update(metadata or {})
    write_json(sidecar, meta)
    return sidecar
