"""Command line entry point: ``binattn <subcommand> [flags]``.

Exit codes: 0 success, 1 failed check or invalid input, 2 usage error.
The seed falls back to the ``BINATTN_SEED`` environment variable, then 0.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import _backend
from .attention import AttentionConfig, BiasSpec, binary_attention_unfused, reference_attention
from .errors import BinAttnError, ConfigError
from .fidelity import attention_fidelity, count_ops
from .quantize import round_half_away
from .tensor_io import DenseMatrix, as_float64, read_tensor, write_tensor

BIAS_CHOICES = {"none": "none", "dense": "dense", "rel1d": "relative1d", "rel2d": "relative2d"}
BIAS_SCALE = 0.5


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("BINATTN_SEED")
    return int(env) if env else 0


def make_bias(variant: str, n: int, rng: np.random.Generator) -> BiasSpec:
    """Random bias of the given CLI variant name, entries ~ N(0, 0.5^2)."""
    if variant == "none":
        return BiasSpec.none()
    if variant == "dense":
        return BiasSpec.dense(BIAS_SCALE * rng.standard_normal((n, n)))
    if variant == "rel1d":
        return BiasSpec.relative1d(BIAS_SCALE * rng.standard_normal(2 * n - 1))
    g = math.isqrt(n)
    if g * g != n:
        raise ConfigError(f"--bias rel2d needs a square --n, got {n}")
    return BiasSpec.relative2d(
        BIAS_SCALE * rng.standard_normal(2 * g - 1), BIAS_SCALE * rng.standard_normal(2 * g - 1)
    )


def _inputs(args, rng):
    if args.q or args.k or args.v:
        if not (args.q and args.k and args.v):
            raise ConfigError("--q, --k and --v must be given together")
        return tuple(as_float64(read_tensor(p)) for p in (args.q, args.k, args.v))
    return tuple(rng.standard_normal((args.n, args.d)) for _ in range(3))


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _compare(args):
    """Shared by ``fidelity`` and ``demo``: reference vs binary attention maps."""
    rng = np.random.default_rng(_seed(args))
    q, k, v = _inputs(args, rng)
    n, d = q.shape
    bias = make_bias(args.bias, n, rng)
    ref = reference_attention(q, k, v, AttentionConfig(bias=bias))
    cfg = AttentionConfig(n=n, d=d, bias=bias, quantize_pv=False)
    binp = binary_attention_unfused(q, k, v, cfg)
    report = attention_fidelity(ref.p, binp.p, k=args.topk)
    return ref, binp, report, cfg


def _report_lines(report, ops) -> list[tuple[str, str]]:
    rows = [(k, _fmt(v)) for k, v in report.as_row().items()]
    rows += [
        ("bops", str(ops.bops)),
        ("int8_ops", str(ops.int8_ops)),
        ("flops", str(ops.flops)),
        ("overhead_flops", str(ops.overhead_flops)),
        ("total_ops", _fmt(ops.total_ops)),
    ]
    return rows


def _print_table(rows) -> None:
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v}")


def cmd_fidelity(args) -> int:
    _, _, report, cfg = _compare(args)
    cfg = AttentionConfig(
        n=cfg.n, d=cfg.d, bias=cfg.bias, quantize_pv=not args.no_quantize_pv,
        block_rows=args.block, block_cols=args.block,
    )
    rows = _report_lines(report, count_ops(cfg, include_overhead=args.include_overhead))
    _print_table(rows)
    if args.output:
        _write_rows(args.output, ("metric", "value"), rows)
    if args.force_fail or not report.cos_sim > 0:
        print("FAIL: attention maps are not positively correlated", file=sys.stderr)
        return 1
    return 0


def pgm_bytes(p: np.ndarray) -> bytes:
    """8-bit binary PGM of ``p`` with every row scaled by its own maximum."""
    peak = p.max(axis=1, keepdims=True)
    scaled = np.where(peak > 0, p / np.where(peak > 0, peak, 1.0), 0.0)
    pix = round_half_away(scaled * 255.0).astype(np.uint8)
    h, w = pix.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()


def cmd_demo(args) -> int:
    ref, binp, report, cfg = _compare(args)
    out = Path(args.output or "demo_out")
    out.mkdir(parents=True, exist_ok=True)
    for name, p in (("p_ref", ref.p), ("p_bin", binp.p)):
        _write_rows(out / f"{name}.csv", [f"c{j}" for j in range(p.shape[1])], [[_fmt(x) for x in row] for row in p])
        (out / f"{name}.pgm").write_bytes(pgm_bytes(p))
        write_tensor(out / f"{name}.batf", DenseMatrix(p))
    rows = _report_lines(report, count_ops(cfg))
    _write_rows(out / "report.csv", ("metric", "value"), rows)
    _print_table(rows)
    print(f"wrote p_ref/p_bin .csv .pgm .batf and report.csv to {out}")
    return 1 if args.force_fail else 0


def cmd_verify_theorem1(args) -> int:
    from .theory import JointGaussianSpec, arcsine_correlation, monte_carlo_sign_covariance

    if not -1.0 <= args.rho <= 1.0:
        raise ConfigError("--rho must lie in [-1, 1]")
    spec = JointGaussianSpec.correlated(args.dim, args.rho)
    emp = monte_carlo_sign_covariance(spec, args.samples, _seed(args))
    ana = arcsine_correlation(spec.correlation)
    dev = float(np.abs(emp - ana).max())
    tol = (3.0 if args.dim == 1 else 4.0) / math.sqrt(args.samples)
    np.set_printoptions(precision=6, suppress=True)
    print("empirical E[sign(q) sign(k)^T]:")
    print(emp)
    print("analytic (2/pi) arcsin(C):")
    print(ana)
    print(f"max deviation {dev:.6g}  tolerance {tol:.6g}")
    if args.output:
        rows = [
            (i, j, _fmt(emp[i, j]), _fmt(ana[i, j])) for i in range(args.dim) for j in range(args.dim)
        ]
        _write_rows(args.output, ("i", "j", "empirical", "analytic"), rows)
    ok = dev < tol and not args.force_fail
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest(_seed(args), force_fail=args.force_fail)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    if args.output:
        _write_rows(
            args.output, ("check", "value", "limit", "passed"),
            [(r.name, _fmt(r.value), _fmt(r.limit), int(r.passed)) for r in results],
        )
    return 1 if failed else 0


def cmd_bench(args) -> int:
    from .bench import format_table, run_bench, speedups, write_csv

    sizes = [int(s) for s in args.sizes.split(",") if s]
    backends = sorted(_backend.BACKENDS) if args.backend == "both" else [args.backend]
    results = []
    for b in backends:
        results += run_bench(
            args.suite, [(n, n, args.d) for n in sizes], reps=args.reps, seed=_seed(args),
            warmups=args.warmups, backend=b, threads=_backend.get_threads(),
        )
    print(format_table(results))
    ratios = speedups(results)
    if ratios:
        print("\nbinary_gemm speedup over naive_f32_gemm")
        for n, m, d, b, r in ratios:
            print(f"  {b:<9} N=M={n} d={d}: {r:.2f}x")
    path = args.csv or args.output
    if path:
        write_csv(path, results)
    bad = [r for r in results if not r.verified]
    return 1 if bad or args.force_fail else 0


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default: $BINATTN_SEED or 0)")
    common.add_argument("--threads", type=int, default=None, help="worker cap; 0 = all cores")
    common.add_argument("--output", default=None, help="CSV file (directory for demo)")
    common.add_argument("--force-fail", action="store_true", help=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="binattn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    s = sub.add_parser("selftest", parents=[common], help="run the invariant suite")
    s.set_defaults(func=cmd_selftest, default_threads=1)

    s = sub.add_parser("verify-theorem1", parents=[common], help="Monte Carlo check of the arcsine law")
    s.add_argument("--dim", type=int, default=1)
    s.add_argument("--rho", type=float, default=0.5)
    s.add_argument("--samples", type=int, default=1_000_000)
    s.set_defaults(func=cmd_verify_theorem1, default_threads=0)

    for name, func, helptext in (
        ("fidelity", cmd_fidelity, "compare reference and binary attention maps"),
        ("demo", cmd_demo, "write attention maps as CSV and PGM images"),
    ):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--n", type=int, default=64)
        s.add_argument("--d", type=int, default=32)
        s.add_argument("--bias", choices=sorted(BIAS_CHOICES), default="none")
        s.add_argument("--topk", type=int, default=100)
        s.add_argument("--q", help="BATF file with Q (needs --k and --v too)")
        s.add_argument("--k", help="BATF file with K")
        s.add_argument("--v", help="BATF file with V")
        s.set_defaults(func=func, default_threads=0)
        if name == "fidelity":
            s.add_argument("--block", type=int, default=64)
            s.add_argument("--no-quantize-pv", action="store_true")
            s.add_argument("--include-overhead", action="store_true")

    s = sub.add_parser("bench", parents=[common], help="time GEMM and attention kernels")
    s.add_argument("--suite", choices=("gemm", "attention"), default="gemm")
    s.add_argument("--sizes", default="512,1024,2048")
    s.add_argument("--d", type=int, default=128)
    s.add_argument("--reps", type=int, default=9)
    s.add_argument("--warmups", type=int, default=2)
    s.add_argument("--backend", choices=sorted(_backend.BACKENDS) + ["both"], default=_backend.BACKEND)
    s.add_argument("--csv", default=None)
    s.set_defaults(func=cmd_bench, default_threads=1)
    return p


def run(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    threads = args.threads if args.threads is not None else args.default_threads
    _backend.set_threads(threads)
    try:
        return args.func(args)
    except (BinAttnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
