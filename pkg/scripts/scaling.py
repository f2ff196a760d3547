"""Run time against worker count for SUMD and DP on one synthetic dataset.

    python scripts/scaling.py --rows 50000 --features 8 --workers-list 1 2 4 8
"""

import argparse
import os
import sys

from bayestree.core import Hyperparams
from bayestree.harness import (ExperimentConfig, SyntheticSpec, emit_report, generate_synthetic,
                               merge_reports, scaling_sweep, summary_text)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=50_000)
    p.add_argument("--features", type=int, default=8)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--iterations", type=int, default=400)
    p.add_argument("--workers-list", type=int, nargs="+",
                   default=sorted({1, 2, 4, os.cpu_count() or 1}))
    p.add_argument("--methods", nargs="+", default=["sumd", "dp"])
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="scaling")
    args = p.parse_args(argv)

    spec = SyntheticSpec(args.rows, args.features, args.classes, args.seed)
    data = generate_synthetic(spec)
    hp = Hyperparams(iterations=args.iterations, burn_in=0, seed=args.seed)
    reports = [scaling_sweep(ExperimentConfig(method=m, synthetic=spec, hp=hp,
                                              workers_list=tuple(args.workers_list),
                                              repetitions=args.repetitions), data)
               for m in args.methods]
    merged = merge_reports(reports)
    emit_report(merged, args.out, stem="scaling")
    sys.stdout.write(summary_text(merged))
    return 0


if __name__ == "__main__":
    sys.exit(main())
