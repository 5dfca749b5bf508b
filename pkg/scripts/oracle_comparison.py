"""Oracle SSL (true clean mask) and forward correction with the true channel, next to DRPL."""

import numpy as np

from _common import base_parser, run_one, synthetic
from drpl.errors import InsufficientCleanSetError

MODES = ("oracle-ssl", "forward-oracle", "drpl", "ce-baseline")


def main():
    p = base_parser(__doc__)
    p.add_argument("--rates", nargs="+", type=float, default=[0.4, 0.6, 0.8])
    args = p.parse_args()
    blobs = synthetic(args)
    print("rate  " + "  ".join(f"{m:>14}" for m in MODES))
    for rate in args.rates:
        row = []
        for mode in MODES:
            accs = []
            for seed in args.seeds:
                try:
                    accs.append(run_one(mode, "uniform-id", rate, seed, blobs)[0].accuracy_last)
                except InsufficientCleanSetError:
                    pass
            row.append(f"{np.median(accs):14.3f}" if accs else f"{'n/a':>14}")
        print(f"{rate:<5g} " + "  ".join(row))


if __name__ == "__main__":
    main()
