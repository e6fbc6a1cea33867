"""Softmax attention: full-precision reference and the binary-QK paths.

The binary score between query ``i`` and key ``j`` is
``mu_q * mu_k * (s_i . t_j) / tau + b_ij`` where ``s``/``t`` are packed sign
rows and ``mu`` the mean-absolute scales. The fused path streams key/value
blocks with a running row max and denominator, so it never holds an N x N
score matrix.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _backend
from .bitops import binary_gemm
from .errors import ConfigError, ShapeError, ValidationError
from .opcount import OpCounter
from .quantize import binary_quantize, coeff_ints, quantize_values
from .tensor_io import DenseMatrix, as_float64


@dataclass(frozen=True)
class BiasSpec:
    """Additive pre-softmax bias.

    ``relative1d`` uses ``b_ij = offsets[i - j + N - 1]``. ``relative2d``
    lays the N tokens on a ``g x g`` grid (row-major) and uses
    ``b_ij = row_offsets[dr + g - 1] + col_offsets[dc + g - 1]`` with
    ``dr``/``dc`` the grid-row and grid-column differences.
    """

    variant: str = "none"
    table: Optional[np.ndarray] = None
    offsets: Optional[np.ndarray] = None
    row_offsets: Optional[np.ndarray] = None
    col_offsets: Optional[np.ndarray] = None

    @classmethod
    def none(cls) -> "BiasSpec":
        return cls()

    @classmethod
    def dense(cls, table) -> "BiasSpec":
        return cls("dense", table=as_float64(table))

    @classmethod
    def relative1d(cls, offsets) -> "BiasSpec":
        return cls("relative1d", offsets=_vector(offsets))

    @classmethod
    def relative2d(cls, row_offsets, col_offsets) -> "BiasSpec":
        r, c = _vector(row_offsets), _vector(col_offsets)
        if r.shape != c.shape or r.size % 2 == 0:
            raise ShapeError("row and column offset tables must share an odd length 2g-1")
        return cls("relative2d", row_offsets=r, col_offsets=c)

    @property
    def is_none(self) -> bool:
        return self.variant == "none"

    @property
    def parameter_count(self) -> int:
        """Stored bias parameters: N^2 for dense, O(sqrt N) for relative2d."""
        if self.variant == "dense":
            return self.table.size
        if self.variant == "relative1d":
            return self.offsets.size
        if self.variant == "relative2d":
            return self.row_offsets.size + self.col_offsets.size
        return 0

    def check(self, n: int) -> None:
        if self.variant == "none":
            return
        if self.variant == "dense":
            if self.table.shape != (n, n):
                raise ShapeError(f"dense bias is {self.table.shape}, need {(n, n)}")
        elif self.variant == "relative1d":
            if self.offsets.size != 2 * n - 1:
                raise ShapeError(f"relative1d needs {2 * n - 1} offsets, got {self.offsets.size}")
        elif self.variant == "relative2d":
            g = math.isqrt(n)
            if g * g != n:
                raise ShapeError(f"relative2d needs a square token count, got N={n}")
            if self.row_offsets.size != 2 * g - 1:
                raise ShapeError(f"relative2d on a {g}x{g} grid needs {2 * g - 1} offsets")
        else:
            raise ConfigError(f"unknown bias variant {self.variant!r}")


def _vector(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64).ravel()
    if not np.all(np.isfinite(v)):
        raise ValidationError("bias offsets must be finite")
    v.flags.writeable = False
    return v


def bias_block(spec: BiasSpec, n: int, rows: slice, cols: slice) -> Optional[np.ndarray]:
    """The ``[rows, cols]`` window of the materialized bias, or None for no bias."""
    if spec.is_none:
        return None
    if spec.variant == "dense":
        return spec.table[rows, cols]
    i = np.arange(n)[rows]
    j = np.arange(n)[cols]
    if spec.variant == "relative1d":
        return spec.offsets[i[:, None] - j[None, :] + n - 1]
    g = math.isqrt(n)
    ri, ci = np.divmod(i, g)
    rj, cj = np.divmod(j, g)
    return (
        spec.row_offsets[ri[:, None] - rj[None, :] + g - 1]
        + spec.col_offsets[ci[:, None] - cj[None, :] + g - 1]
    )


def materialize_bias(spec: BiasSpec, n: int) -> DenseMatrix:
    spec.check(n)
    b = bias_block(spec, n, slice(None), slice(None))
    return DenseMatrix(np.zeros((n, n)) if b is None else b)


@dataclass(frozen=True)
class AttentionConfig:
    """Shape and kernel options for one attention call.

    ``n``/``d`` may be left as None and are then taken from the inputs.
    ``temperature`` defaults to sqrt(d). Block sizes larger than N are
    clipped to N.
    """

    n: Optional[int] = None
    d: Optional[int] = None
    temperature: Optional[float] = None
    block_rows: int = 64
    block_cols: int = 64
    quantize_pv: bool = True
    bias: BiasSpec = field(default_factory=BiasSpec)

    def resolve(self, n: int, d: int) -> "AttentionConfig":
        if self.n is not None and self.n != n or self.d is not None and self.d != d:
            raise ShapeError(f"config is for N={self.n}, d={self.d}; inputs are N={n}, d={d}")
        if n < 1 or d < 1:
            raise ShapeError("attention needs N >= 1 and d >= 1")
        tau = math.sqrt(d) if self.temperature is None else float(self.temperature)
        if not tau > 0:
            raise ConfigError(f"temperature must be positive, got {tau}")
        if self.block_rows < 1 or self.block_cols < 1:
            raise ConfigError("block sizes must be >= 1")
        self.bias.check(n)
        return replace(
            self,
            n=n,
            d=d,
            temperature=tau,
            block_rows=min(self.block_rows, n),
            block_cols=min(self.block_cols, n),
        )


@dataclass(frozen=True)
class AttentionOutput:
    y: np.ndarray
    p: Optional[np.ndarray] = None
    row_max: Optional[np.ndarray] = None
    row_sum: Optional[np.ndarray] = None


def _inputs(q, k, v, cfg: AttentionConfig):
    q, k, v = as_float64(q), as_float64(k), as_float64(v)
    if k.shape != q.shape:
        raise ShapeError(f"Q is {q.shape} but K is {k.shape}")
    if v.shape[0] != q.shape[0]:
        raise ShapeError(f"V has {v.shape[0]} rows, need {q.shape[0]}")
    return q, k, v, cfg.resolve(*q.shape)


def _matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _backend.kernels.f64_matmul(np.ascontiguousarray(a), np.ascontiguousarray(b))


def _softmax_parts(s: np.ndarray):
    m = s.max(axis=1)
    e = np.exp(s - m[:, None])
    return e, m, e.sum(axis=1)


def reference_attention(q, k, v, cfg: AttentionConfig = AttentionConfig()) -> AttentionOutput:
    """Full-precision softmax attention in real64."""
    q, k, v, cfg = _inputs(q, k, v, cfg)
    s = _matmul(q, k.T) / cfg.temperature
    b = bias_block(cfg.bias, cfg.n, slice(None), slice(None))
    if b is not None:
        s = s + b
    e, m, l = _softmax_parts(s)
    y = _matmul(e, v) / l[:, None]
    return AttentionOutput(y, e / l[:, None], m, l)


def _binary_scores(g: np.ndarray, scale: float, b: Optional[np.ndarray]) -> np.ndarray:
    s = g.astype(np.float64) * scale
    return s if b is None else s + b


def binary_scores(q, k, cfg: AttentionConfig = AttentionConfig()) -> np.ndarray:
    """The N x N pre-softmax binary score matrix."""
    q, k = as_float64(q), as_float64(k)
    if k.shape != q.shape:
        raise ShapeError(f"Q is {q.shape} but K is {k.shape}")
    cfg = cfg.resolve(*q.shape)
    sq, sk = binary_quantize(q), binary_quantize(k)
    g = binary_gemm(sq.bits, sk.bits)
    b = bias_block(cfg.bias, cfg.n, slice(None), slice(None))
    return _binary_scores(g, sq.scale * sk.scale / cfg.temperature, b)


def binary_attention_unfused(q, k, v, cfg: AttentionConfig = AttentionConfig()) -> AttentionOutput:
    """Binary-QK attention with the whole score matrix materialized.

    With ``quantize_pv`` the normalized coefficients are rounded to uint8
    and the values to per-channel int8 before an integer product.
    """
    q, k, v, cfg = _inputs(q, k, v, cfg)
    s = binary_scores(q, k, cfg)
    e, m, l = _softmax_parts(s)
    p = e / l[:, None]
    if cfg.quantize_pv:
        vq = quantize_values(v)
        acc = _backend.kernels.u8s8_matmul(coeff_ints(p), np.ascontiguousarray(vq.data))
        y = acc * (vq.channel_scales / 255.0)
    else:
        y = _matmul(e, v) / l[:, None]
    return AttentionOutput(y, p, m, l)


def _fused_rows(i0, i1, sw, tw, d, scale, vals, vscale, cfg, counter):
    kern = _backend.kernels
    n, bv = cfg.n, cfg.block_cols
    br = i1 - i0
    m = np.full(br, -np.inf)
    l = np.zeros(br)
    o = np.zeros((br, vals.shape[1]))
    s_rows = sw[i0:i1]
    for j0 in range(0, n, bv):
        j1 = min(j0 + bv, n)
        g = kern.binary_gemm(s_rows, tw[j0:j1], d, 1)
        s = _binary_scores(g, scale, bias_block(cfg.bias, n, slice(i0, i1), slice(j0, j1)))
        m_new = np.maximum(m, s.max(axis=1))
        p_hat = np.exp(s - m_new[:, None])
        alpha = np.exp(m - m_new)
        l = alpha * l + p_hat.sum(axis=1)
        if cfg.quantize_pv:
            blk = kern.u8s8_matmul(coeff_ints(p_hat), vals[j0:j1]).astype(np.float64)
        else:
            blk = kern.f64_matmul(p_hat, vals[j0:j1])
        o = alpha[:, None] * o + blk
        m = m_new
        if counter is not None:
            counter.add_block(br, j1 - j0, d, bias=not cfg.bias.is_none, quantize_pv=cfg.quantize_pv)
    y = o / l[:, None]
    if cfg.quantize_pv:
        y = y / 255.0 * vscale
    if counter is not None:
        counter.add_finalize(br, vals.shape[1], quantize_pv=cfg.quantize_pv)
    return y, m, l


def binary_attention_fused(
    q, k, v, cfg: AttentionConfig = AttentionConfig(), counter: Optional[OpCounter] = None,
    threads: Optional[int] = None,
) -> AttentionOutput:
    """Tiled binary attention with online softmax.

    For each block of ``block_rows`` queries, keys/values are visited in
    blocks of ``block_cols``; the running max ``m``, denominator ``l`` and
    accumulator ``O`` are rescaled by ``exp(m_old - m_new)`` at every step.
    With ``quantize_pv`` the unnormalized block weights ``exp(S - m)`` are
    rounded to uint8 and multiplied with int8 values in integer arithmetic.

    Query blocks are independent and may run on ``threads`` workers; the
    result does not depend on the thread count. When ``counter`` is given,
    every block adds its op tallies to it.
    """
    q, k, v, cfg = _inputs(q, k, v, cfg)
    n, d = cfg.n, cfg.d
    sq, sk = binary_quantize(q), binary_quantize(k)
    scale = sq.scale * sk.scale / cfg.temperature
    if cfg.quantize_pv:
        vq = quantize_values(v)
        vals, vscale = np.ascontiguousarray(vq.data), vq.channel_scales
    else:
        vals, vscale = np.ascontiguousarray(v), None
    if counter is not None:
        counter.add_preprocess(n, d, quantize_pv=cfg.quantize_pv)

    starts = list(range(0, n, cfg.block_rows))
    counters = [None if counter is None else OpCounter() for _ in starts]

    def run(idx):
        i0 = starts[idx]
        return _fused_rows(
            i0, min(i0 + cfg.block_rows, n), sq.bits.words, sk.bits.words, d,
            scale, vals, vscale, cfg, counters[idx],
        )

    workers = _backend.get_threads() if threads is None else max(1, threads)
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(starts))))
    else:
        parts = [run(i) for i in range(len(starts))]
    if counter is not None:
        for c in counters:
            counter.update(c)
    y = np.concatenate([p[0] for p in parts])
    m = np.concatenate([p[1] for p in parts])
    l = np.concatenate([p[2] for p in parts])
    return AttentionOutput(y, None, m, l)


def pv_error_envelope(v) -> float:
    """Per-entry error envelope ``d * max(delta) * (1/510 + 1/254)`` for the int8 P.V path.

    Stacks the coefficient and value rounding bounds with a factor ``d``.
    It holds on Gaussian inputs with ``N`` not far above ``d``, but it is
    not a worst-case guarantee; see :func:`pv_error_bound`.
    """
    vq = quantize_values(v)
    return vq.data.shape[1] * float(vq.channel_scales.max()) * (1 / 510 + 1 / 254)


def pv_error_bound(v) -> np.ndarray:
    """Worst-case per-channel error of quantized vs unquantized P.V.

    Each of the ``N`` coefficients moves by at most 1/510 (after division
    by ``l >= 1`` in the fused path), each dequantized value is at most
    ``127 delta`` in size, and value rounding adds ``delta / 2`` under
    weights that sum to one.
    """
    vq = quantize_values(v)
    n, delta = vq.data.shape[0], vq.channel_scales
    return n / 510 * 127 * delta + delta / 2
