"""File formats: grid densities, sample matrices and image tensors, plus
atomic writers for CSV/JSON outputs.

Binary layouts (little endian):

* ``LGS1``: magic, u32 N, u32 d, u32 reserved, then N*d float32 row-major.
* ``LGI1``: magic, u32 N, C, H, W, then N*C*H*W float32.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError
from .measure import GridDensity, SampleSet

LGS_MAGIC = b"LGS1"
LGI_MAGIC = b"LGI1"


def atomic_write(path, payload) -> Path:
    """Write bytes or text to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = payload.encode() if isinstance(payload, str) else bytes(payload)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write(path, dumps_json(obj))


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return atomic_write(path, buf.getvalue())


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv_table(path):
    """Header and rows (as strings) of a CSV file."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


# -- grid densities --------------------------------------------------------------

def write_grid_csv(path, density: GridDensity) -> Path:
    """Columns ``x0[,x1],rho`` with points in row-major (last axis fastest) order."""
    header = [f"x{a}" for a in range(density.ndim)] + ["rho"]
    pts = density.points()
    rows = np.column_stack([pts, density.rho.ravel()])
    return write_csv(path, header, rows.tolist())


def read_grid_csv(path) -> GridDensity:
    header, rows = read_csv_table(path)
    if header[-1] != "rho":
        raise FormatError(f"{path}: last column must be 'rho'")
    try:
        arr = np.array(rows, dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric entry") from exc
    d = len(header) - 1
    if arr.ndim != 2 or arr.shape[1] != d + 1:
        raise FormatError(f"{path}: ragged rows")
    axes = [np.unique(arr[:, a]) for a in range(d)]
    shape = tuple(len(ax) for ax in axes)
    if int(np.prod(shape)) != len(arr):
        raise FormatError(f"{path}: points do not form a full tensor grid")
    mesh = np.meshgrid(*axes, indexing="ij")
    expect = np.stack([m.ravel() for m in mesh], axis=1)
    if not np.allclose(arr[:, :d], expect, rtol=0, atol=1e-9 * max(1.0, np.abs(expect).max())):
        raise FormatError(f"{path}: grid points must be listed in row-major order")
    for ax in axes:
        steps = np.diff(ax)
        if len(ax) < 3 or not np.allclose(steps, steps[0], rtol=1e-6):
            raise FormatError(f"{path}: axes must be uniform with at least 3 points")
    domain = tuple((float(ax[0]), float(ax[-1])) for ax in axes)
    return GridDensity(domain=domain, shape=shape, rho=arr[:, d].reshape(shape)).normalize()


# -- samples ---------------------------------------------------------------------

def write_samples_csv(path, samples: SampleSet) -> Path:
    header = [f"x{a}" for a in range(samples.d)]
    rows = samples.points
    if samples.weights is not None:
        header.append("weight")
        rows = np.column_stack([rows, samples.weights])
    return write_csv(path, header, rows.tolist())


def read_samples_csv(path) -> SampleSet:
    """Numeric CSV, header optional; a column named ``weight`` supplies weights."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise FormatError(f"{path}: empty sample file")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header, rows = [c.strip() for c in rows[0]], rows[1:]
    try:
        arr = np.array(rows, dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric or ragged sample rows") from exc
    if arr.ndim == 1:
        arr = arr[:, None]
    weights = None
    if header is not None and "weight" in header:
        j = header.index("weight")
        weights = arr[:, j]
        arr = np.delete(arr, j, axis=1)
    return SampleSet(arr, weights)


def write_lgs(path, samples) -> Path:
    x = np.asarray(samples.points if isinstance(samples, SampleSet) else samples, dtype="<f4")
    if x.ndim != 2:
        raise FormatError("LGS1 holds an N x d matrix")
    head = LGS_MAGIC + struct.pack("<III", x.shape[0], x.shape[1], 0)
    return atomic_write(path, head + x.tobytes(order="C"))


def read_lgs(path) -> SampleSet:
    raw = Path(path).read_bytes()
    if raw[:4] != LGS_MAGIC or len(raw) < 16:
        raise FormatError(f"{path}: not an LGS1 file")
    n, d, _ = struct.unpack("<III", raw[4:16])
    body = raw[16:]
    if len(body) != 4 * n * d:
        raise FormatError(f"{path}: expected {n}x{d} float32 values, got {len(body) // 4}")
    return SampleSet(np.frombuffer(body, dtype="<f4").reshape(n, d).astype(float))


def write_lgi(path, data) -> Path:
    x = np.asarray(getattr(data, "data", data), dtype="<f4")
    if x.ndim != 4:
        raise FormatError("LGI1 holds an N x C x H x W tensor")
    return atomic_write(path, LGI_MAGIC + struct.pack("<IIII", *x.shape) + x.tobytes(order="C"))


def read_lgi(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != LGI_MAGIC or len(raw) < 20:
        raise FormatError(f"{path}: not an LGI1 file")
    shape = struct.unpack("<IIII", raw[4:20])
    body = raw[20:]
    if len(body) != 4 * int(np.prod(shape)):
        raise FormatError(f"{path}: payload does not match header shape {shape}")
    return np.frombuffer(body, dtype="<f4").reshape(shape).astype(float)


def load_samples(path) -> SampleSet:
    """Sample matrix from CSV, LGS1, or LGI1 (flattened per image), by magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == LGS_MAGIC:
        return read_lgs(path)
    if magic == LGI_MAGIC:
        x = read_lgi(path)
        return SampleSet(x.reshape(x.shape[0], -1))
    return read_samples_csv(path)
