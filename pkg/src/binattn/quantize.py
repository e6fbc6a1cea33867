"""Quantizers for the three operands of binary attention.

* queries/keys: one scale times a packed sign matrix
* attention coefficients: uint8 with the static scale 1/255
* values: symmetric int8 with one scale per channel (column)

All rounding is half-away-from-zero, shared by the fused and unfused paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bitops import pack_signs
from .errors import RangeError, ShapeError
from .tensor_io import BitMatrix, DenseMatrix, QuantizedCoeffs, QuantizedValues, as_float64

COEFF_LEVELS = 255
VALUE_LEVELS = 127
COEFF_TOLERANCE = 1e-9


def round_half_away(x: np.ndarray) -> np.ndarray:
    # floor(|x| + 0.5) would round 0.49999999999999994 up: the sum itself rounds.
    a = np.abs(x)
    whole = np.floor(a)
    return np.copysign(whole + (a - whole >= 0.5), x)


def _times_levels(p: np.ndarray):
    """``p * 255`` as an unevaluated sum ``hi + lo`` that is exact (Dekker product)."""
    hi = p * COEFF_LEVELS
    c = 134217729.0 * p  # 2**27 + 1 splits p into two 26-bit halves
    p_hi = c - (c - p)
    lo = (p_hi * COEFF_LEVELS - hi) + (p - p_hi) * COEFF_LEVELS
    return hi, lo


@dataclass(frozen=True)
class ScaledBinary:
    bits: BitMatrix
    scale: float

    def dequantize(self) -> np.ndarray:
        return self.scale * self.bits.signs().astype(np.float64)


def binary_quantize(m) -> ScaledBinary:
    """Approximate ``m`` by ``mu * sign(m)`` with the L2-optimal ``mu``.

    For a fixed sign pattern the error ``||m - mu * sign(m)||_F`` is a
    quadratic in ``mu`` minimized at ``mean(|m|)``.
    """
    a = as_float64(m)
    if a.size == 0:
        raise ShapeError("cannot quantize an empty matrix")
    return ScaledBinary(pack_signs(a), float(np.abs(a).mean()))


def coeff_ints(p: np.ndarray) -> np.ndarray:
    """round(p * 255) as uint8 for p already known to lie in [0, 1].

    A product that rounds onto a half-way point is settled by the sign of
    its rounding error, so the result is never more than 1/510 from ``p``.
    """
    hi, lo = _times_levels(np.clip(p, 0.0, 1.0))
    whole = np.floor(hi)
    frac = hi - whole
    r = whole + ((frac > 0.5) | ((frac == 0.5) & (lo >= 0)))
    return r.astype(np.uint8)


def quantize_coeffs(p) -> QuantizedCoeffs:
    a = as_float64(p)
    if a.size and (a.min() < -COEFF_TOLERANCE or a.max() > 1.0 + COEFF_TOLERANCE):
        raise RangeError(
            f"coefficients must lie in [0, 1], got range [{a.min():.3g}, {a.max():.3g}]"
        )
    return QuantizedCoeffs(coeff_ints(a))


def dequantize_coeffs(q: QuantizedCoeffs) -> DenseMatrix:
    return DenseMatrix(q.dequantize())


def value_scales(v: np.ndarray) -> np.ndarray:
    peak = np.abs(v).max(axis=0) if v.shape[0] else np.zeros(v.shape[1])
    return np.where(peak > 0, peak / VALUE_LEVELS, 1.0)


def quantize_values(v) -> QuantizedValues:
    a = as_float64(v)
    scales = value_scales(a)
    q = np.clip(round_half_away(a / scales), -VALUE_LEVELS, VALUE_LEVELS)
    return QuantizedValues(q.astype(np.int8), scales)


def dequantize_values(q: QuantizedValues) -> DenseMatrix:
    return DenseMatrix(q.data.astype(np.float64) * q.channel_scales)
