"""Sign packing and XNOR/popcount arithmetic on packed sign rows.

Under the +1/-1 reading of bits, the dot product of two packed rows of
width ``d`` is ``d - 2 * hamming``: every agreeing position contributes +1
and every differing one -1.
"""

from __future__ import annotations

import numpy as np

from . import _backend
from .errors import ShapeError
from .tensor_io import BitMatrix, as_float64, tail_mask


def pack_signs(m) -> BitMatrix:
    """Pack ``m >= 0`` into 64-bit words (sign(0) counts as +1)."""
    a = as_float64(m)
    if a.shape[1] == 0:
        raise ShapeError("cannot pack a matrix with zero columns")
    return BitMatrix(_backend.kernels.pack_signs(np.ascontiguousarray(a)), a.shape[1])


def _row_words(x, d: int | None = None) -> tuple[np.ndarray, int]:
    if isinstance(x, BitMatrix):
        if x.rows != 1:
            raise ShapeError(f"expected a single row, got {x.rows}")
        return x.words[0], x.logical_cols
    w = np.asarray(x, dtype=np.uint64).ravel()
    if d is None:
        raise ShapeError("a raw word row needs an explicit width")
    return w, d


def _pair(a, b, d):
    wa, da = _row_words(a, d)
    wb, db = _row_words(b, d)
    if da != db or wa.shape != wb.shape:
        raise ShapeError(f"width mismatch: {da} vs {db}")
    return wa, wb, da


def hamming_distance(a, b, d: int | None = None) -> int:
    """Number of positions where two packed rows differ.

    ``a`` and ``b`` are single-row BitMatrix objects, or raw uint64 word rows
    together with their logical width ``d``.
    """
    wa, wb, d = _pair(a, b, d)
    x = wa ^ wb
    x[-1] &= np.uint64(tail_mask(d))
    return int(np.bitwise_count(x).sum())


def xnor_popcount_dot(a, b, d: int | None = None) -> int:
    wa, wb, d = _pair(a, b, d)
    x = ~(wa ^ wb)
    x[-1] &= np.uint64(tail_mask(d))
    return 2 * int(np.bitwise_count(x).sum()) - d


def binary_gemm(s: BitMatrix, t: BitMatrix, nthreads: int | None = None) -> np.ndarray:
    """All-pairs +1/-1 dot products of the rows of ``s`` and ``t`` (int32, N x M)."""
    if s.logical_cols != t.logical_cols:
        raise ShapeError(f"width mismatch: {s.logical_cols} vs {t.logical_cols}")
    if nthreads is None:
        nthreads = _backend.get_threads()
    return _backend.kernels.binary_gemm(s.words, t.words, s.logical_cols, nthreads)


def signs(m) -> np.ndarray:
    """Dense +1/-1 int8 matrix, the unpacked form of :func:`pack_signs`."""
    return np.where(as_float64(m) >= 0.0, 1, -1).astype(np.int8)
