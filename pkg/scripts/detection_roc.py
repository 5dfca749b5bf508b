"""Clean/noisy separation after each stage versus the loss of a plain CE model.

Writes roc_<noise>_<stage>_s<seed>.csv files for plotting and prints AUCs.
"""

from pathlib import Path

import numpy as np

from _common import base_parser, run_one, synthetic
from drpl import metrics


def main():
    p = base_parser(__doc__)
    p.add_argument("--noise", nargs="+", default=["uniform-id", "nonuniform-id"])
    p.add_argument("--rate", type=float, default=0.4)
    p.add_argument("--out", default="results/roc")
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    blobs = synthetic(args)
    print("noise            seed  stage1  stage2  ce-loss  tpr2   fpr2")
    for kind in args.noise:
        for seed in args.seeds:
            drpl, _, prep = run_one("drpl", kind, args.rate, seed, blobs)
            ce, _, _ = run_one("ce-baseline", kind, args.rate, seed, blobs)
            noisy = ~prep.train.clean
            for stage, scores, gamma in (("stage1", drpl.post_stage1, drpl.config["gamma1"]),
                                         ("stage2", drpl.post_stage2, drpl.config["gamma2"]),
                                         ("ce", ce.losses_final, float(np.median(ce.losses_final)))):
                curve = metrics.roc(metrics.DetectionOutcome(scores, noisy, gamma))
                metrics.write_roc_csv(curve, out / f"roc_{kind}_{stage}_s{seed}.csv", gamma=gamma)
            d = drpl.detection
            print(f"{kind:<16} {seed:>4}  {d['stage1']['auc']:.3f}   {d['stage2']['auc']:.3f}   "
                  f"{ce.detection['final_loss']['auc']:.3f}    {d['stage2']['tpr']:.3f}  {d['stage2']['fpr']:.3f}")


if __name__ == "__main__":
    main()
