"""Binary container and CSV interchange for tensors and matrices.

Binary layout (all little-endian)::

    offset  size  field
    0       4     magic b"RCPD"
    4       2     format version (uint16, currently 1)
    6       2     ndim (uint16, 2 or 3)
    8       8*n   dims (uint64 each)
    ...           payload: float64 values in C order

C order means the last index varies fastest, so a tensor payload is
``X[0,0,0], X[0,0,1], ...``, matching the in-memory layout documented in
:mod:`robust_cpd.tensor_core`.

CSV files carry a header ``i,j,k,value`` (tensors) or ``i,j,value``
(matrices) with zero-based indices; one row per element. Missing elements
read as zero. Dimensions are inferred from the largest index unless given.
"""

import csv
import struct

import numpy as np

MAGIC = b"RCPD"
VERSION = 1
_HEADER = struct.Struct("<4sHH")


class FormatError(ValueError):
    """Raised for malformed container or CSV files."""


def write_array(path, array):
    """Write a 2-D or 3-D float array to the binary container."""
    a = np.ascontiguousarray(array, dtype="<f8")
    if a.ndim not in (2, 3):
        raise ValueError(f"container holds matrices or three-way tensors, got ndim={a.ndim}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(a.tobytes(order="C"))


def read_array(path, ndim=None):
    """Read an array written by :func:`write_array`.

    If `ndim` is given, the stored array must have that many dimensions.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file too short for header")
    magic, version, nd = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if nd not in (2, 3):
        raise FormatError(f"{path}: unsupported ndim {nd}")
    if ndim is not None and nd != ndim:
        raise FormatError(f"{path}: expected ndim={ndim}, file has ndim={nd}")
    offset = _HEADER.size
    dims = struct.unpack_from(f"<{nd}Q", raw, offset)
    offset += 8 * nd
    count = int(np.prod(dims))
    if len(raw) - offset != 8 * count:
        raise FormatError(f"{path}: payload holds {(len(raw) - offset) / 8} values, expected {count}")
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
    return data.reshape(dims).astype(float)


def write_csv(path, array):
    """Write an array as ``i,j[,k],value`` rows."""
    a = np.asarray(array, dtype=float)
    if a.ndim not in (2, 3):
        raise ValueError(f"CSV holds matrices or three-way tensors, got ndim={a.ndim}")
    header = ["i", "j", "k"][: a.ndim] + ["value"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for idx in np.ndindex(a.shape):
            w.writerow([*idx, repr(float(a[idx]))])


def read_csv(path, dims=None):
    """Read an ``i,j[,k],value`` CSV into a dense array."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    if header not in (["i", "j", "k", "value"], ["i", "j", "value"]):
        raise FormatError(f"{path}: unexpected header {header}")
    nd = len(header) - 1
    body = [r for r in rows[1:] if r]
    idx = np.array([[int(v) for v in r[:nd]] for r in body], dtype=int).reshape(-1, nd)
    vals = np.array([float(r[nd]) for r in body])
    if np.any(idx < 0):
        raise FormatError(f"{path}: negative index")
    if dims is None:
        if not len(idx):
            raise FormatError(f"{path}: cannot infer dimensions from an empty body")
        dims = tuple(int(d) + 1 for d in idx.max(axis=0))
    out = np.zeros(dims)
    if len(idx):
        if np.any(idx >= np.asarray(dims)):
            raise FormatError(f"{path}: index outside dims {dims}")
        out[tuple(idx.T)] = vals
    return out


def load(path, ndim=None):
    """Load a container or CSV file, dispatching on the extension."""
    if str(path).lower().endswith(".csv"):
        a = read_csv(path)
        if ndim is not None and a.ndim != ndim:
            raise FormatError(f"{path}: expected ndim={ndim}, file has ndim={a.ndim}")
        return a
    return read_array(path, ndim=ndim)


def save(path, array):
    if str(path).lower().endswith(".csv"):
        write_csv(path, array)
    else:
        write_array(path, array)
