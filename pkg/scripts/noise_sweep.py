"""Final test accuracy (best and last epoch) across modes, noise types and rates."""

import numpy as np

from _common import base_parser, run_one, synthetic
from drpl.errors import InsufficientCleanSetError


def main():
    p = base_parser(__doc__)
    p.add_argument("--modes", nargs="+", default=["drpl", "ce-baseline", "mixup-baseline"])
    p.add_argument("--noise", nargs="+", default=["uniform-id", "nonuniform-id", "uniform-ood", "pairwise"])
    p.add_argument("--rates", nargs="+", type=float, default=[0.2, 0.4, 0.6])
    args = p.parse_args()
    blobs = synthetic(args)
    print("| noise | rate | " + " | ".join(args.modes) + " |")
    print("|---|---|" + "---|" * len(args.modes))
    for kind in args.noise:
        for rate in args.rates:
            cells = []
            for mode in args.modes:
                best, last = [], []
                for seed in args.seeds:
                    try:
                        report, _, _ = run_one(mode, kind, rate, seed, blobs)
                    except InsufficientCleanSetError:
                        continue
                    best.append(report.accuracy_best)
                    last.append(report.accuracy_last)
                cells.append(f"{np.median(best):.3f} / {np.median(last):.3f}" if best else "n/a")
            print(f"| {kind} | {rate:g} | " + " | ".join(cells) + " |")
    print("\ncells: median best / median last test accuracy over seeds")


if __name__ == "__main__":
    main()
