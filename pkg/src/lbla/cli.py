"""Benchmark / ablation command line.

Examples:
    lbla-bench --lengths 512,1024,2048,4096,8192 --kinds softmax,lbla-sigmoid \
               --out scaling.csv
    lbla-bench --ablation --strict
"""

import os
import sys

# Pin BLAS threading before numpy is first imported so timings are
# single-threaded at every sequence length (parallelism across cells,
# never inside a timed region).
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse

from .bench import (
    AblationConfig,
    BenchSpec,
    emit_csv,
    format_ablation_report,
    parse_kinds_arg,
    run_ablation,
    run_bench,
    summarize_slopes,
)
from .errors import ConfigError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lbla-bench",
        description="Time softmax vs linearized locality-biased attention "
                    "across sequence lengths, or run the structural "
                    "ablation matrix.")
    parser.add_argument("--lengths", default="512,1024,2048,4096,8192",
                        help="comma list of sequence lengths (default: %(default)s)")
    parser.add_argument("--d-model", type=int, default=256)
    parser.add_argument("--heads", type=int, default=4)
    parser.add_argument("--kinds", default="softmax,lbla-sigmoid",
                        help="comma list: softmax, lbla-relu, lbla-exp, "
                             "lbla-sigmoid, lbla-identity")
    parser.add_argument("--no-reweight", action="store_true",
                        help="disable the cosine locality re-weighting "
                             "for all lbla kinds")
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--warmup", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--precision", choices=("f64", "f32"), default="f64")
    parser.add_argument("--out", metavar="CSV", default=None,
                        help="write records to this CSV file")
    parser.add_argument("--ablation", action="store_true",
                        help="run the ablation matrix instead of timing")
    parser.add_argument("--strict", action="store_true",
                        help="with --ablation: exit 1 unless every arm "
                             "shows exactly its expected property pattern")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.ablation:
            report = run_ablation(AblationConfig(seed=args.seed))
            print(format_ablation_report(report))
            if args.strict and not report.all_conform:
                return 1
            return 0

        lengths = tuple(int(part) for part in args.lengths.split(",") if part)
        spec = BenchSpec(
            lengths=lengths, d_model=args.d_model, heads=args.heads,
            kinds=parse_kinds_arg(args.kinds, use_reweight=not args.no_reweight),
            repeats=args.repeats, warmup=args.warmup,
            precision=args.precision, seed=args.seed)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    result = run_bench(spec, log=sys.stdout)
    for skip in result.skipped:
        print(f"skipped {skip.attn_kind} T={skip.seq_len}: {skip.reason}",
              file=sys.stderr)
    summarize_slopes(result)
    if args.out:
        emit_csv(result.records, args.out)
        print(f"wrote {len(result.records)} records to {args.out}")
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
