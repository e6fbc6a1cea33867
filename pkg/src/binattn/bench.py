"""Median-of-repetitions timing for the GEMM and attention kernels.

Each (kernel, shape) gets seeded inputs built outside the timed region, a
few untimed warmups, then ``reps`` timed calls on ``time.perf_counter_ns``.
Every benchmarked output is checked once against an independent oracle so
the timed code is the tested code.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import _backend
from .attention import AttentionConfig, binary_attention_fused, binary_attention_unfused, reference_attention
from .errors import ConfigError
from .fidelity import count_ops

GEMM_KERNELS = ("naive_f32_gemm", "int8_gemm", "binary_gemm")
ATTENTION_KERNELS = ("reference_attention", "binary_attention_fused")
SUITES = {"gemm": GEMM_KERNELS, "attention": ATTENTION_KERNELS}
CSV_COLUMNS = ("kernel", "N", "M", "d", "median_ns", "ops", "ops_per_sec", "backend")
MIN_REPS = 5
MIN_WARMUPS = 2
BLOCK = 64


@dataclass(frozen=True)
class BenchResult:
    kernel: str
    backend: str
    n: int
    m: int
    d: int
    reps: int
    warmups: int
    median_ns: int
    ops: float
    verified: bool

    @property
    def ops_per_sec(self) -> float:
        return self.ops / (self.median_ns * 1e-9) if self.median_ns else float("inf")

    def as_row(self) -> dict:
        return {
            "kernel": self.kernel,
            "N": self.n,
            "M": self.m,
            "d": self.d,
            "median_ns": self.median_ns,
            "ops": self.ops,
            "ops_per_sec": self.ops_per_sec,
            "backend": self.backend,
        }


def time_call(fn: Callable[[], object], reps: int, warmups: int) -> list[int]:
    for _ in range(warmups):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    return times


def _attention_cfg(n: int, d: int) -> AttentionConfig:
    return AttentionConfig(n=n, d=d, block_rows=BLOCK, block_cols=BLOCK, quantize_pv=True)


def attention_ops(kernel: str, n: int, d: int) -> float:
    if kernel == "binary_attention_fused":
        return count_ops(_attention_cfg(n, d)).total_ops
    # two real GEMMs plus scale, rowmax, shift, exp and rowsum over N^2 scores
    return 4 * n * n * d + 5 * n * n


def _prepare(kernel: str, n: int, m: int, d: int, rng: np.random.Generator, kern, threads: int):
    """Return (timed callable, verifier of its output, op count)."""
    if kernel == "naive_f32_gemm":
        a = rng.standard_normal((n, d)).astype(np.float32)
        b = rng.standard_normal((m, d)).astype(np.float32)
        ref = a.astype(np.float64) @ b.astype(np.float64).T
        tol = 1e-4 * np.sqrt(d) * (np.abs(a).max() * np.abs(b).max())
        return (lambda: kern.naive_f32_gemm(a, b)), (lambda out: np.abs(out - ref).max() <= tol), 2 * n * m * d
    if kernel == "int8_gemm":
        p = rng.integers(0, 256, size=(n, m), dtype=np.uint8)
        v = rng.integers(-127, 128, size=(m, d), dtype=np.int8)
        ref = p.astype(np.float64) @ v.astype(np.float64)
        return (lambda: kern.u8s8_matmul(p, v)), (lambda out: np.array_equal(out, ref)), 2 * n * m * d
    if kernel == "binary_gemm":
        x = rng.standard_normal((n, d))
        y = rng.standard_normal((m, d))
        s, t = kern.pack_signs(x), kern.pack_signs(y)
        ref = np.where(x >= 0, 1.0, -1.0) @ np.where(y >= 0, 1.0, -1.0).T
        return (lambda: kern.binary_gemm(s, t, d, threads)), (lambda out: np.array_equal(out, ref)), 2 * n * m * d
    if kernel in ATTENTION_KERNELS:
        if m != n:
            raise ConfigError("attention benchmarks need N == M")
        q, k, v = (rng.standard_normal((n, d)) for _ in range(3))
        cfg = _attention_cfg(n, d)
        if kernel == "reference_attention":
            def oracle(out):
                s = q @ k.T / np.sqrt(d)
                e = np.exp(s - s.max(axis=1, keepdims=True))
                y = (e / e.sum(axis=1, keepdims=True)) @ v
                return np.allclose(out.y, y, rtol=1e-9, atol=1e-12)

            return (lambda: reference_attention(q, k, v, cfg)), oracle, attention_ops(kernel, n, d)

        def oracle(out):
            u = binary_attention_unfused(q, k, v, AttentionConfig(quantize_pv=False)).y
            return np.linalg.norm(out.y - u) <= 1e-2 * np.linalg.norm(u)

        run = lambda: binary_attention_fused(q, k, v, cfg, threads=threads)  # noqa: E731
        return run, oracle, attention_ops(kernel, n, d)
    if kernel == "noop":
        return (lambda: None), (lambda out: out is None), 0
    raise ConfigError(f"unknown kernel {kernel!r}")


def run_bench(
    suite: str | Sequence[str],
    shapes: Iterable[tuple[int, int, int]],
    reps: int = 9,
    seed: int = 0,
    warmups: int = MIN_WARMUPS,
    backend: Optional[str] = None,
    threads: int = 1,
    verify: bool = True,
) -> list[BenchResult]:
    """Time every kernel of ``suite`` (a suite name or kernel list) at every (N, M, d)."""
    kernels = SUITES.get(suite, (suite,)) if isinstance(suite, str) else tuple(suite)
    if reps < MIN_REPS or warmups < MIN_WARMUPS:
        raise ConfigError(f"need reps >= {MIN_REPS} and warmups >= {MIN_WARMUPS}")
    try:
        kern = _backend.get_kernels(backend)
    except KeyError:
        raise ConfigError(f"backend {backend!r} is not available") from None
    name = backend or _backend.BACKEND
    results = []
    shapes = list(shapes)
    previous = _backend.BACKEND, _backend.kernels
    _backend.kernels = kern
    try:
        for kernel in kernels:
            for n, m, d in shapes:
                rng = np.random.default_rng([seed, n, m, d])
                fn, check, ops = _prepare(kernel, n, m, d, rng, kern, threads)
                ok = bool(check(fn())) if verify else False
                times = time_call(fn, reps, warmups)
                results.append(
                    BenchResult(kernel, name, n, m, d, reps, warmups, int(statistics.median(times)), float(ops), ok)
                )
    finally:
        _backend.BACKEND, _backend.kernels = previous
    return results


def speedups(results: Sequence[BenchResult], baseline: str = "naive_f32_gemm", target: str = "binary_gemm"):
    """``[(N, M, d, backend, baseline_ns / target_ns)]`` for shapes timed with both kernels."""
    base = {(r.n, r.m, r.d, r.backend): r for r in results if r.kernel == baseline}
    out = []
    for r in results:
        key = (r.n, r.m, r.d, r.backend)
        if r.kernel == target and key in base:
            out.append((*key, base[key].median_ns / r.median_ns))
    return out


def write_csv(path, results: Sequence[BenchResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in results:
            w.writerow(r.as_row())


def format_table(results: Sequence[BenchResult]) -> str:
    head = f"{'kernel':<24}{'backend':<10}{'N':>6}{'M':>6}{'d':>5}{'median_ms':>12}{'Gops/s':>10}  ok"
    lines = [head, "-" * len(head)]
    for r in results:
        lines.append(
            f"{r.kernel:<24}{r.backend:<10}{r.n:>6}{r.m:>6}{r.d:>5}"
            f"{r.median_ns / 1e6:>12.3f}{r.ops_per_sec / 1e9:>10.3f}  {'yes' if r.verified else 'NO'}"
        )
    return "\n".join(lines)
