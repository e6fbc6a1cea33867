"""Gradients for quantization-aware training at toy scale.

The sign quantizer gets a hard-tanh straight-through estimator. The only
exactly differentiable quantity in binary attention is the additive bias:
with the binary scores held fixed, ``Y = softmax(S0 + B) V`` is smooth in
``B``, so its gradient can be checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionConfig, BiasSpec, binary_scores, reference_attention
from .errors import ConfigError, ShapeError, ValidationError
from .tensor_io import as_float64


@dataclass(frozen=True)
class SteConfig:
    clip_threshold: float = 1.0

    def __post_init__(self):
        if not self.clip_threshold > 0:
            raise ConfigError("clip_threshold must be positive")


def ste_backward(upstream, x, cfg: SteConfig = SteConfig()) -> np.ndarray:
    """Pass ``upstream`` where ``|x| <= clip_threshold``, zero elsewhere."""
    g, a = np.asarray(upstream, dtype=np.float64), np.asarray(x, dtype=np.float64)
    if g.shape != a.shape:
        raise ShapeError(f"upstream {g.shape} vs input {a.shape}")
    return np.where(np.abs(a) <= cfg.clip_threshold, g, 0.0)


@dataclass(frozen=True)
class DistillationLoss:
    value: float
    grad: np.ndarray


def distillation_loss(student, teacher) -> DistillationLoss:
    """Mean squared error between student and teacher outputs."""
    s, t = as_float64(student), as_float64(teacher)
    if s.shape != t.shape:
        raise ShapeError(f"student {s.shape} vs teacher {t.shape}")
    diff = s - t
    return DistillationLoss(float(np.mean(diff * diff)), 2.0 * diff / diff.size)


def _smooth_forward(s0: np.ndarray, b: np.ndarray, v: np.ndarray):
    s = s0 + b
    e = np.exp(s - s.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    return p, p @ v


def _check_smooth(cfg: AttentionConfig) -> None:
    if cfg.quantize_pv:
        raise ConfigError("bias gradients need quantize_pv=False (rounding is not differentiable)")


def bias_loss(q, k, v, bias, teacher, cfg: AttentionConfig = AttentionConfig(quantize_pv=False)) -> float:
    """Distillation loss of binary attention run with a dense ``bias`` table."""
    _check_smooth(cfg)
    s0 = binary_scores(q, k, cfg)
    _, y = _smooth_forward(s0, as_float64(bias), as_float64(v))
    return distillation_loss(y, teacher).value


def bias_gradient(q, k, v, bias, teacher, cfg: AttentionConfig = AttentionConfig(quantize_pv=False)):
    """Loss and analytic ``dLoss/dB`` for a dense bias.

    Backward: ``dP = dY V^T``, then the softmax Jacobian per row gives
    ``dS = P * (dP - rowsum(dP * P))``; ``dB = dS`` since B enters additively.
    """
    _check_smooth(cfg)
    v = as_float64(v)
    s0 = binary_scores(q, k, cfg)
    b = as_float64(bias)
    if b.shape != s0.shape:
        raise ShapeError(f"bias {b.shape} vs scores {s0.shape}")
    p, y = _smooth_forward(s0, b, v)
    loss = distillation_loss(y, teacher)
    dp = loss.grad @ v.T
    ds = p * (dp - np.sum(dp * p, axis=1, keepdims=True))
    return loss.value, ds


def numeric_bias_gradient(q, k, v, bias, teacher, cfg: AttentionConfig, eps: float) -> np.ndarray:
    _check_smooth(cfg)
    v = as_float64(v)
    s0 = binary_scores(q, k, cfg)
    b = np.array(as_float64(bias))
    t = as_float64(teacher)
    out = np.empty_like(b)
    for idx in np.ndindex(*b.shape):
        orig = b[idx]
        b[idx] = orig + eps
        up = distillation_loss(_smooth_forward(s0, b, v)[1], t).value
        b[idx] = orig - eps
        down = distillation_loss(_smooth_forward(s0, b, v)[1], t).value
        b[idx] = orig
        out[idx] = (up - down) / (2 * eps)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Entrywise ``|a - n| / max(|a|, |n|, floor)``."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def gradient_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-300) -> float:
    """Normwise ``max|a - n| / max(max|a|, max|n|)``.

    Central differences carry an absolute error of about ``ulp(loss) / eps``
    on every entry, so entrywise ratios blow up where the true gradient is
    near zero; the normwise ratio does not.
    """
    a, n = np.asarray(analytic), np.asarray(numeric)
    scale = max(float(np.abs(a).max()), float(np.abs(n).max()), floor)
    return float(np.abs(a - n).max() / scale)


def grad_check_bias(
    q, k, v, spec: BiasSpec, cfg: AttentionConfig = AttentionConfig(quantize_pv=False),
    eps: float = 1e-5, teacher=None,
) -> float:
    """Normwise relative error of the analytic dense-bias gradient vs central differences.

    The teacher defaults to the full-precision reference output for the same
    inputs (self-distillation).
    """
    if spec.variant != "dense":
        raise ValidationError("the gradient check runs on a dense bias table")
    if not 1e-7 <= eps <= 1e-3:
        raise ValidationError("eps must lie in [1e-7, 1e-3]")
    _check_smooth(cfg)
    if teacher is None:
        teacher = reference_attention(q, k, v, AttentionConfig(temperature=cfg.temperature)).y
    _, analytic = bias_gradient(q, k, v, spec.table, teacher, cfg)
    numeric = numeric_bias_gradient(q, k, v, spec.table, teacher, cfg, eps)
    return gradient_error(analytic, numeric)


def descent_step(q, k, v, bias, teacher, lr: float, cfg: AttentionConfig = AttentionConfig(quantize_pv=False)):
    """One plain gradient step on the bias; returns (new_bias, loss_before, loss_after)."""
    before, g = bias_gradient(q, k, v, bias, teacher, cfg)
    new_bias = as_float64(bias) - lr * g
    return new_bias, before, bias_loss(q, k, v, new_bias, teacher, cfg)

