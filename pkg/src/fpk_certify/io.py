"""Deterministic file formats: CSV tables, snapshot binaries and JSON records.

Floats are written with ``repr`` (shortest round-trip decimal), so equal
inputs give byte-identical files.

Snapshot binary layout, all little-endian:

    offset  type        content
    0       4 bytes     magic b"FPKS"
    4       uint32      format version (1)
    8       uint32      d
    12      uint32[d]   N_1 .. N_d
    ...     float64[d]  R_1 .. R_d  (grid is prod [-R_i, R_i])
    ...     float64     t
    ...     float64[N]  cell values, row-major (last axis fastest)
"""

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .solver import Grid, Snapshot, mass_balance_residual

MAGIC = b"FPKS"
VERSION = 1


def fmt(v):
    """Shortest round-trip text for a number."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (int, float, np.integer, np.floating)) else v for v in row])
    return path


def read_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[float(v) for v in r] for r in rows[1:]]


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n")
    return path


def snapshot_rows(snapshot):
    x = snapshot.grid.centers()
    for p, v in zip(x, snapshot.values.ravel()):
        yield list(p) + [v]


def write_snapshot_csv(path, snapshot):
    d = snapshot.grid.dim
    header = [f"x{i + 1}" for i in range(d)] + ["density"]
    return write_csv(path, header, snapshot_rows(snapshot))


def write_snapshot_binary(path, snapshot):
    g = snapshot.grid
    d = g.dim
    head = MAGIC + struct.pack(f"<II{d}I{d}dd", VERSION, d, *g.cells, *g.extents, snapshot.t)
    body = np.ascontiguousarray(snapshot.values, dtype="<f8").tobytes()
    Path(path).write_bytes(head + body)
    return Path(path)


def read_snapshot_binary(path):
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError("not a snapshot file")
    version, d = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    off = 12
    cells = struct.unpack_from(f"<{d}I", data, off)
    off += 4 * d
    extents = struct.unpack_from(f"<{d}d", data, off)
    off += 8 * d
    (t,) = struct.unpack_from("<d", data, off)
    off += 8
    grid = Grid(extents, cells)
    values = np.frombuffer(data, dtype="<f8", offset=off).reshape(grid.shape).astype(float)
    return Snapshot(t, values, grid)


def write_ledger_csv(path, ledger):
    res = mass_balance_residual(ledger)
    rows = ([e.t, e.mass, e.c_integral, r, e.leakage] for e, r in zip(ledger, res))
    return write_csv(path, ["t", "mass", "c_integral", "residual", "leakage"], rows)
