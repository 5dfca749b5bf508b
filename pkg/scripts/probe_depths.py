"""Linear-probe accuracy on held-out classes at every depth, DRPL versus mixup."""

import numpy as np

from _common import base_parser, run_one, synthetic
from drpl import metrics


def main():
    p = base_parser(__doc__)
    p.add_argument("--rate", type=float, default=0.8)
    p.add_argument("--probe-classes", type=int, default=4)
    args = p.parse_args()
    blobs = synthetic(args, probe_classes=args.probe_classes)
    for mode in ("drpl", "mixup-baseline"):
        per_depth = {}
        for seed in args.seeds:
            report, model, prep = run_one(mode, "uniform-id", args.rate, seed, blobs)
            for depth in range(model.num_hidden + 1):
                acc = metrics.linear_probe(model, depth, prep.train, prep.probe)
                per_depth.setdefault(depth, []).append(acc)
        cells = ", ".join(f"depth {d}: {np.median(v):.3f}" for d, v in per_depth.items())
        print(f"{mode:<15} {cells}")
    print(f"depth {model.num_hidden} is the softmax output")


if __name__ == "__main__":
    main()
