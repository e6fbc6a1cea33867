"""Time every kernel on the compiled extension and on the numpy fallback.

    python3 benchmarks/compare_backends.py [--sizes 256,512,1024] [--d 128] [--csv out.csv]

Prints one table per suite, then the per-kernel fallback/compiled time ratio.
The fallback's naive_f32_gemm is a BLAS call, so that row is not a like for
like comparison.
"""

import argparse
import sys

from binattn import _backend
from binattn.bench import format_table, run_bench, write_csv


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="256,512,1024")
    ap.add_argument("--attention-sizes", default="128,256,512")
    ap.add_argument("--d", type=int, default=128)
    ap.add_argument("--reps", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv")
    args = ap.parse_args(argv)
    if "compiled" not in _backend.BACKENDS:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1

    plan = [
        ("gemm", [int(s) for s in args.sizes.split(",")]),
        ("attention", [int(s) for s in args.attention_sizes.split(",")]),
    ]
    results = []
    for suite, sizes in plan:
        rows = []
        for backend in ("compiled", "python"):
            rows += run_bench(suite, [(n, n, args.d) for n in sizes], reps=args.reps, seed=args.seed, backend=backend)
        print(format_table(rows), end="\n\n")
        results += rows

    by_key = {(r.kernel, r.n, r.d, r.backend): r for r in results}
    print(f"{'kernel':<24}{'N':>6}{'python/compiled':>18}")
    for r in results:
        if r.backend == "compiled":
            slow = by_key[(r.kernel, r.n, r.d, "python")]
            print(f"{r.kernel:<24}{r.n:>6}{slow.median_ns / r.median_ns:>18.2f}")
    if args.csv:
        write_csv(args.csv, results)
    return 0 if all(r.verified for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
