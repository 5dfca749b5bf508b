"""Shared helpers for the experiment scripts."""

import argparse

from drpl import pipeline
from drpl.experiment import ExperimentSpec, SyntheticSpec, prepare
from drpl.pipeline import RunConfig


def base_parser(description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=500)
    p.add_argument("--dims", type=int, default=16)
    p.add_argument("--separation", type=float, default=6.0)
    return p


def synthetic(args, probe_classes=0):
    return SyntheticSpec(args.classes, args.per_class, args.dims, args.separation,
                         test_per_class=args.per_class // 2, probe_classes=probe_classes)


def run_one(mode, kind, rate, seed, blobs, **overrides):
    cfg = RunConfig(mode=mode, seed=seed, **overrides)
    prep = prepare(ExperimentSpec(config=cfg, synthetic=blobs, noise=kind, rate=rate))
    report, model = pipeline.execute(prep.train, cfg, prep.test, transition=prep.transition)
    return report, model, prep
