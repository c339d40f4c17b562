"""JSON and CSV serialization with deterministic formatting."""

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError


def matrix_to_json(m):
    """Nested rows of [re, im] pairs."""
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def matrix_from_json(data):
    """Accept rows of numbers or of [re, im] pairs."""
    try:
        rows = []
        for row in data:
            out = []
            for z in row:
                if isinstance(z, (list, tuple)):
                    if len(z) != 2:
                        raise ValueError("complex entries must be [re, im] pairs")
                    out.append(complex(float(z[0]), float(z[1])))
                else:
                    out.append(complex(z))
            rows.append(out)
        m = np.array(rows, dtype=complex)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed matrix: {exc}") from None
    if m.ndim != 2:
        raise ConfigurationError("matrix rows must have equal length")
    return m


def _default(o):
    if isinstance(o, np.ndarray):
        if np.iscomplexobj(o):
            return matrix_to_json(o) if o.ndim == 2 else [[float(z.real), float(z.imag)] for z in o]
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj):
    return json.dumps(obj, default=_default, sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj), encoding="utf-8")


def config_hash(resolved):
    """Short content hash of a resolved config (key order independent)."""
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"), default=_default)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
