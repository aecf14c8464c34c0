"""Dense float64 tensors, deterministic matrix products, and the shared
on-disk tensor format.

Everything downstream (feature maps, heat maps, weights, descriptors) is a
plain C-contiguous ``numpy.ndarray`` of float64.  This module holds the few
primitives whose exact numerical behaviour the rest of the code relies on.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"JPT1"
_MAX_NDIM = 32


class TensorFormatError(ValueError):
    """Raised for malformed tensor files; message carries path and byte offset."""


def as_tensor(data, dims=None) -> np.ndarray:
    """Coerce `data` to a C-contiguous float64 array, optionally reshaped.

    All extents must be >= 1; the number of elements must match the
    requested dims.
    """
    t = np.ascontiguousarray(data, dtype=np.float64)
    if dims is not None:
        t = reshape(t, dims)
    if t.ndim > 0 and min(t.shape) < 1:
        raise ValueError(f"tensor extents must be >= 1, got {t.shape}")
    return t


def reshape(t: np.ndarray, new_dims) -> np.ndarray:
    """Relabel extents without touching element order (row-major)."""
    new_dims = tuple(int(d) for d in new_dims)
    if any(d < 1 for d in new_dims):
        raise ValueError(f"tensor extents must be >= 1, got {new_dims}")
    if int(np.prod(new_dims)) != t.size:
        raise ValueError(
            f"cannot reshape {t.size} elements into {new_dims} "
            f"({int(np.prod(new_dims))} elements)"
        )
    return np.ascontiguousarray(t).reshape(new_dims)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed ascending-k accumulation order.

    Each output element is accumulated exactly as the naive triple loop
    ``for k: out[i, j] += a[i, k] * b[k, j]`` would, so results are
    bitwise reproducible and bitwise equal to that loop.  Inputs must be
    2-D with matching inner extents.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale `v` to unit L2 norm; a zero vector passes through unchanged."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n > 0.0:
        return v / n
    return v.copy()


def write_tensor(path, t: np.ndarray) -> None:
    """Write `t` in the binary tensor format (float32 on disk).

    Layout: magic ``JPT1``, u32 little-endian ndim, ndim u32 little-endian
    extents, then row-major float32 little-endian values.
    """
    t = np.ascontiguousarray(t, dtype=np.float64)
    dims = t.shape if t.ndim > 0 else (1,)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(dims)))
        f.write(struct.pack(f"<{len(dims)}I", *dims))
        f.write(t.astype("<f4").tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    """Read a tensor file, widening values to float64 in memory."""
    with open(path, "rb") as f:
        raw = f.read()

    def fail(offset, msg):
        raise TensorFormatError(f"{path}: byte {offset}: {msg}")

    if raw[:4] != MAGIC:
        fail(0, f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 8:
        fail(4, "truncated header")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    if not 1 <= ndim <= _MAX_NDIM:
        fail(4, f"implausible ndim {ndim}")
    hdr_end = 8 + 4 * ndim
    if len(raw) < hdr_end:
        fail(8, f"truncated extents (need {ndim})")
    dims = struct.unpack_from(f"<{ndim}I", raw, 8)
    if any(d < 1 for d in dims):
        fail(8, f"non-positive extent in {dims}")
    count = int(np.prod(dims))
    expected = hdr_end + 4 * count
    if len(raw) != expected:
        fail(hdr_end, f"payload is {len(raw) - hdr_end} bytes, expected {4 * count}")
    values = np.frombuffer(raw, dtype="<f4", count=count, offset=hdr_end)
    return values.astype(np.float64).reshape(dims)
