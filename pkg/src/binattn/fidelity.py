"""Attention-map agreement metrics and operation counting.

Operation totals fold categories as ``bops / 64 + int8_ops / 2 + flops``:
a binary multiply-accumulate costs 1/64 of a flop and an int8 op 1/2
(the A100 INT8:FP16 throughput ratio). Quantization preprocessing and the
final output normalization are itemized as overhead and only enter the
total when asked for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionConfig, binary_attention_fused
from .errors import ConfigError, ShapeError, ValidationError
from .opcount import HEADLINE_FLOPS, OVERHEAD_FLOPS, OpCounter
from .tensor_io import as_float64

BOPS_PER_FLOP = 64
INT8_OPS_PER_FLOP = 2


@dataclass(frozen=True)
class FidelityReport:
    cos_sim: float
    relative_l1: float
    rmse: float
    precision_at_k: float
    k: int

    def as_row(self) -> dict:
        return {
            "cos_sim": self.cos_sim,
            "relative_l1": self.relative_l1,
            "rmse": self.rmse,
            f"precision@{self.k}": self.precision_at_k,
        }


def top_k_indices(p: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the ``k`` largest entries per row; ties go to the lower index."""
    order = np.argsort(-p, axis=1, kind="stable")
    return order[:, :k]


def attention_fidelity(p_ref, p_bin, k: int = 100, check_rows: bool = True) -> FidelityReport:
    """Compare two attention maps.

    ``relative_l1`` is normalized by ``p_ref`` and so is not symmetric.
    ``precision_at_k`` is the per-row overlap of the two top-k column sets,
    divided by ``min(k, N)`` and averaged over rows.
    """
    a, b = as_float64(p_ref), as_float64(p_bin)
    if a.shape != b.shape:
        raise ShapeError(f"attention maps differ in shape: {a.shape} vs {b.shape}")
    if k < 1:
        raise ValidationError("k must be >= 1")
    if check_rows:
        for name, m in (("p_ref", a), ("p_bin", b)):
            if m.min() < -1e-6 or np.abs(m.sum(axis=1) - 1.0).max() > 1e-6:
                raise ValidationError(f"{name} rows are not probability vectors")
    fa, fb = a.ravel(), b.ravel()
    cos = float(fa @ fb / (np.linalg.norm(fa) * np.linalg.norm(fb)))
    diff = fa - fb
    rel_l1 = float(np.abs(diff).sum() / np.abs(fa).sum())
    rmse = float(math.sqrt(np.mean(diff * diff)))
    kk = min(k, a.shape[1])
    ta, tb = top_k_indices(a, kk), top_k_indices(b, kk)
    hits = [np.intersect1d(ta[i], tb[i]).size for i in range(a.shape[0])]
    return FidelityReport(cos, rel_l1, rmse, float(np.mean(hits) / kk), k)


@dataclass(frozen=True)
class OpsReport:
    bops: int
    int8_ops: int
    flops: int
    overhead_flops: int
    total_ops: float
    items: dict = field(default_factory=dict)


def ops_report(counts: OpCounter, include_overhead: bool = False) -> OpsReport:
    bops = counts["qk_bops"]
    int8 = counts["pv_int8_ops"]
    flops = sum(counts[c] for c in HEADLINE_FLOPS)
    overhead = sum(counts[c] for c in OVERHEAD_FLOPS)
    total = bops / BOPS_PER_FLOP + int8 / INT8_OPS_PER_FLOP + flops
    if include_overhead:
        total += overhead
    items = {name: counts[name] for name in ("qk_bops", "pv_int8_ops") + HEADLINE_FLOPS + OVERHEAD_FLOPS}
    return OpsReport(bops, int8, flops, overhead, total, items)


def _concrete(cfg: AttentionConfig) -> AttentionConfig:
    if cfg.n is None or cfg.d is None:
        raise ConfigError("op counting needs n and d set on the config")
    return cfg.resolve(cfg.n, cfg.d)


def count_ops(cfg: AttentionConfig, include_overhead: bool = False) -> OpsReport:
    """Closed-form op counts for one fused binary-attention call."""
    cfg = _concrete(cfg)
    n, d = cfg.n, cfg.d
    area = n * n
    t_v = -(-n // cfg.block_cols)
    quant = cfg.quantize_pv
    c = OpCounter()
    c["qk_bops"] = 2 * area * d
    c["score_scale"] = area
    c["bias_add"] = 0 if cfg.bias.is_none else area
    for name in ("rowmax", "exp_shift", "exp", "rowsum"):
        c[name] = area
    c["rescale"] = n * t_v * (5 + 2 * d)
    c["pv_int8_ops" if quant else "pv_flops"] = 2 * area * d
    c["qk_quantize"] = 6 * n * d
    c["v_quantize"] = 4 * n * d if quant else 0
    c["p_quantize"] = 2 * area if quant else 0
    c["finalize"] = n * d * (3 if quant else 1)
    return ops_report(c, include_overhead)


def count_ops_instrumented(cfg: AttentionConfig, seed: int = 0, include_overhead: bool = False) -> OpsReport:
    """Run the fused kernel on random inputs and report what its counters saw."""
    cfg = _concrete(cfg)
    rng = np.random.default_rng(seed)
    q, k, v = (rng.standard_normal((cfg.n, cfg.d)) for _ in range(3))
    counter = OpCounter()
    binary_attention_fused(q, k, v, cfg, counter=counter)
    return ops_report(counter, include_overhead)
