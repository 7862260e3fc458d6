"""File formats: m-vectors, atom lists, flat configs and result records."""
from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .spectral import SpectralMeasure

CSV_COLUMNS = ("N", "prediction", "quenched", "q_lo", "q_hi", "annealed", "residual", "seed")


def fmt(x) -> str:
    """17 significant digits; non-finite values as ``inf``, ``-inf``, ``nan``."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def json_value(x):
    """JSON-ready value: finite floats stay numbers, non-finite become strings."""
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else fmt(x)
    if isinstance(x, dict):
        return {k: json_value(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [json_value(v) for v in x]
    return x


class _Float17(float):
    def __repr__(self):
        return format(float(self), ".17g")


def _prepare(x):
    if isinstance(x, dict):
        return {k: _prepare(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_prepare(v) for v in x]
    if isinstance(x, float):
        return _Float17(x)
    return x


def dumps(obj) -> str:
    """Compact JSON with floats printed to 17 significant digits, keys in insertion order."""
    data = _prepare(json_value(obj))

    def encode(o):
        if isinstance(o, _Float17):
            return repr(o)
        if isinstance(o, dict):
            return "{" + ", ".join(f"{json.dumps(k)}: {encode(v)}" for k, v in o.items()) + "}"
        if isinstance(o, list):
            return "[" + ", ".join(encode(v) for v in o) + "]"
        return json.dumps(o)

    return encode(data)


def read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc.strerror or exc}") from exc


def parse_m_vector(text: str) -> np.ndarray:
    """A JSON array of numbers, or one decimal number per line."""
    text = text.strip()
    if not text:
        raise InvalidInputError("m file is empty")
    if text.startswith("["):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"m file is not valid JSON: {exc}") from exc
        if not isinstance(data, list) or not all(isinstance(v, (int, float)) for v in data):
            raise InvalidInputError("m file must be a flat JSON array of numbers")
        return np.asarray(data, dtype=float)
    vals = []
    for k, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            vals.append(float(line))
        except ValueError as exc:
            raise InvalidInputError(f"m file line {k}: {line!r} is not a number") from exc
    return np.asarray(vals, dtype=float)


def read_m_vector(path) -> np.ndarray:
    return parse_m_vector(read_text(path))


def read_atoms(path) -> SpectralMeasure:
    return SpectralMeasure.from_json(read_text(path))


def write_atoms(nu: SpectralMeasure, path) -> None:
    Path(path).write_text(nu.to_json() + "\n", encoding="utf-8")


def parse_config(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    out = {}
    for k, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"config line {k}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise InvalidInputError(f"config line {k}: empty key")
        out[key.replace("-", "_")] = val
    return out


def record_jsonl(rec, timing: bool = False) -> str:
    return dumps(rec.as_dict(timing))


def records_csv(records) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([fmt(r.n), fmt(r.prediction), fmt(r.quenched), fmt(r.q_lo), fmt(r.q_hi),
                    fmt(r.annealed), fmt(r.residual), fmt(r.master_seed)])
    return buf.getvalue()
