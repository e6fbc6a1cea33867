"""Immutable tensor containers and the BATF binary file format.

BATF layout (all integers little-endian)::

    magic    4 bytes  b"BATF"
    version  u32      currently 1
    dtype    u8       0=real32 1=real64 2=int8 3=uint8 4=packed-bit
    ndim     u8
    dims     u64 * ndim
    payload  row-major

Packed-bit tensors have dims ``(rows, logical_cols)``; each row is stored as
``ceil(logical_cols / 64)`` u64 words, bit ``c`` of a row living in word
``c // 64`` at position ``c % 64``. Pad bits must be zero.

An int8 tensor is a :class:`QuantizedValues`; its payload is followed by
``cols`` real64 channel scales. A uint8 tensor is a :class:`QuantizedCoeffs`
whose scale is the fixed 1/255.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from os import PathLike
from typing import Union

import numpy as np

from .errors import FormatError, IoError, ShapeError, ValidationError

MAGIC = b"BATF"
VERSION = 1
WORD_BITS = 64

DTYPE_REAL32 = 0
DTYPE_REAL64 = 1
DTYPE_INT8 = 2
DTYPE_UINT8 = 3
DTYPE_PACKED_BIT = 4

_HEADER = struct.Struct("<4sIBB")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    if a.flags.writeable:
        a = a.copy()
        a.flags.writeable = False
    return a


def words_per_row(d: int) -> int:
    return (d + WORD_BITS - 1) // WORD_BITS


def tail_mask(d: int) -> int:
    """Mask of the valid bits in the last word of a ``d``-wide row."""
    r = d % WORD_BITS
    return (1 << r) - 1 if r else (1 << WORD_BITS) - 1


@dataclass(frozen=True, eq=False)
class DenseMatrix:
    """Row-major real matrix stored as float32 or float64."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 2:
            raise ShapeError(f"DenseMatrix needs 2 dims, got shape {a.shape}")
        if a.dtype not in (np.float32, np.float64):
            a = a.astype(np.float64)
        if not np.all(np.isfinite(a)):
            raise ValidationError("DenseMatrix entries must be finite")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def to_float64(self) -> np.ndarray:
        return self.data.astype(np.float64, copy=False)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, DenseMatrix):
            return NotImplemented
        return self.data.dtype == other.data.dtype and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class BitMatrix:
    """Sign-packed matrix: bit 1 means +1, bit 0 means -1."""

    words: np.ndarray
    logical_cols: int

    def __post_init__(self):
        w = np.asarray(self.words)
        if w.ndim != 2 or w.dtype != np.uint64:
            raise ShapeError("BitMatrix words must be a 2-D uint64 array")
        if self.logical_cols < 1:
            raise ShapeError("BitMatrix needs logical_cols >= 1")
        if w.shape[1] != words_per_row(self.logical_cols):
            raise ShapeError(
                f"{w.shape[1]} words per row cannot hold exactly {self.logical_cols} bits"
            )
        mask = np.uint64(tail_mask(self.logical_cols))
        if w.shape[0] and np.any(w[:, -1] & ~mask):
            raise ValidationError("BitMatrix pad bits must be zero")
        object.__setattr__(self, "words", _frozen(w))

    @property
    def rows(self) -> int:
        return self.words.shape[0]

    @property
    def words_per_row(self) -> int:
        return self.words.shape[1]

    def signs(self) -> np.ndarray:
        """Unpack to an int8 matrix of +1/-1."""
        bits = np.unpackbits(
            self.words.astype("<u8").view(np.uint8).reshape(self.rows, -1),
            axis=1,
            bitorder="little",
        )[:, : self.logical_cols]
        return (2 * bits.astype(np.int8) - 1).astype(np.int8)

    def __eq__(self, other):
        if not isinstance(other, BitMatrix):
            return NotImplemented
        return self.logical_cols == other.logical_cols and np.array_equal(self.words, other.words)


@dataclass(frozen=True, eq=False)
class QuantizedValues:
    """Signed 8-bit matrix with one positive scale per column."""

    data: np.ndarray
    channel_scales: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.data)
        s = np.asarray(self.channel_scales, dtype=np.float64)
        if q.ndim != 2 or q.dtype != np.int8:
            raise ShapeError("QuantizedValues data must be a 2-D int8 array")
        if s.shape != (q.shape[1],):
            raise ShapeError("need one channel scale per column")
        if np.any(q == -128):
            raise ValidationError("-128 is outside the symmetric int8 range")
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise ValidationError("channel scales must be finite and positive")
        object.__setattr__(self, "data", _frozen(q))
        object.__setattr__(self, "channel_scales", _frozen(s))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        if not isinstance(other, QuantizedValues):
            return NotImplemented
        return np.array_equal(self.data, other.data) and np.array_equal(
            self.channel_scales, other.channel_scales
        )


@dataclass(frozen=True, eq=False)
class QuantizedCoeffs:
    """Unsigned 8-bit attention coefficients with static scale 1/255."""

    data: np.ndarray
    scale = 1.0 / 255.0

    def __post_init__(self):
        q = np.asarray(self.data)
        if q.ndim != 2 or q.dtype != np.uint8:
            raise ShapeError("QuantizedCoeffs data must be a 2-D uint8 array")
        object.__setattr__(self, "data", _frozen(q))

    def dequantize(self) -> np.ndarray:
        return self.data / 255.0

    def __eq__(self, other):
        if not isinstance(other, QuantizedCoeffs):
            return NotImplemented
        return np.array_equal(self.data, other.data)


Tensor = Union[DenseMatrix, BitMatrix, QuantizedValues, QuantizedCoeffs]


def as_float64(m) -> np.ndarray:
    """Coerce a DenseMatrix or array-like to a finite 2-D float64 array."""
    if isinstance(m, DenseMatrix):
        return m.to_float64()
    return DenseMatrix(np.asarray(m, dtype=np.float64)).data


def _encode(tensor) -> bytes:
    if isinstance(tensor, np.ndarray):
        tensor = DenseMatrix(tensor)
    if isinstance(tensor, DenseMatrix):
        if tensor.data.dtype == np.float32:
            code, payload = DTYPE_REAL32, tensor.data.astype("<f4").tobytes()
        else:
            code, payload = DTYPE_REAL64, tensor.data.astype("<f8").tobytes()
        dims = tensor.shape
    elif isinstance(tensor, BitMatrix):
        code, dims = DTYPE_PACKED_BIT, (tensor.rows, tensor.logical_cols)
        payload = tensor.words.astype("<u8").tobytes()
    elif isinstance(tensor, QuantizedValues):
        code, dims = DTYPE_INT8, tensor.data.shape
        payload = tensor.data.tobytes() + tensor.channel_scales.astype("<f8").tobytes()
    elif isinstance(tensor, QuantizedCoeffs):
        code, dims = DTYPE_UINT8, tensor.data.shape
        payload = tensor.data.tobytes()
    else:
        raise ValidationError(f"cannot serialize {type(tensor).__name__}")
    header = _HEADER.pack(MAGIC, VERSION, code, len(dims))
    header += struct.pack(f"<{len(dims)}Q", *dims)
    return header + payload


def to_bytes(tensor: Tensor) -> bytes:
    return _encode(tensor)


def from_bytes(buf: bytes) -> Tensor:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, code, ndim = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if ndim != 2:
        raise FormatError(f"expected a 2-D tensor, header says ndim={ndim}")
    off = _HEADER.size
    if len(buf) < off + 8 * ndim:
        raise FormatError("truncated dims")
    rows, cols = struct.unpack_from("<2Q", buf, off)
    off += 16

    def take(nbytes: int) -> bytes:
        if len(buf) - off < nbytes:
            raise FormatError(f"truncated payload: need {nbytes} bytes, have {len(buf) - off}")
        return buf[off : off + nbytes]

    try:
        if code in (DTYPE_REAL32, DTYPE_REAL64):
            dt = np.dtype("<f4") if code == DTYPE_REAL32 else np.dtype("<f8")
            nbytes = rows * cols * dt.itemsize
            a = np.frombuffer(take(nbytes), dtype=dt).reshape(rows, cols)
            out: Tensor = DenseMatrix(a.astype(dt.newbyteorder("=")))
        elif code == DTYPE_PACKED_BIT:
            wpr = words_per_row(cols)
            w = np.frombuffer(take(rows * wpr * 8), dtype="<u8").reshape(rows, wpr)
            nbytes = rows * wpr * 8
            out = BitMatrix(w.astype(np.uint64), int(cols))
        elif code == DTYPE_INT8:
            nbytes = rows * cols + cols * 8
            raw = take(nbytes)
            q = np.frombuffer(raw[: rows * cols], dtype=np.int8).reshape(rows, cols)
            s = np.frombuffer(raw[rows * cols :], dtype="<f8")
            out = QuantizedValues(q.copy(), s.astype(np.float64))
        elif code == DTYPE_UINT8:
            nbytes = rows * cols
            out = QuantizedCoeffs(np.frombuffer(take(nbytes), dtype=np.uint8).reshape(rows, cols))
        else:
            raise FormatError(f"unknown dtype code {code}")
    except (ValidationError, ShapeError) as exc:
        raise FormatError(str(exc)) from exc
    if off + nbytes != len(buf):
        raise FormatError("trailing bytes after payload")
    return out


def write_tensor(path: Union[str, PathLike], tensor: Tensor) -> None:
    buf = _encode(tensor)
    try:
        with open(path, "wb") as fh:
            fh.write(buf)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_tensor(path: Union[str, PathLike]) -> Tensor:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return from_bytes(buf)
