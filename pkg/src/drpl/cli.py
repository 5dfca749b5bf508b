"""Command-line front end: ``drpl gen|corrupt|run|eval|sweep``.

Hyperparameters resolve as built-in defaults < ``--config`` JSON < flags.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import experiment, noise
from .dataset import attach_truth, dumps_json, generate_synthetic, load_dataset, save_dataset
from .experiment import ExperimentSpec, SyntheticSpec
from .pipeline import MODES, RunConfig

# flag name -> RunConfig field
CONFIG_FLAGS = {
    "mode": "mode", "gamma1": "gamma1", "gamma2": "gamma2", "warmup": "warmup",
    "epochs_stage1": "epochs_stage1", "epochs_stage2": "epochs_stage2", "epochs_stage3": "epochs_stage3",
    "epochs_baseline": "epochs_baseline", "lambda1": "lambda1", "lambda2": "lambda2",
    "mixup_alpha": "mixup_alpha", "lr": "lr", "momentum": "momentum", "weight_decay": "weight_decay",
    "batch": "batch", "seed": "seed", "standardize": "standardize",
}


def _add_synthetic(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthetic data")
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--per-class", type=int, default=500)
    g.add_argument("--dims", type=int, default=16)
    g.add_argument("--separation", type=float, default=6.0)
    g.add_argument("--test-per-class", type=int, default=250)
    g.add_argument("--ood-classes", type=int, default=5)


def _add_noise(p: argparse.ArgumentParser, *, multi: bool = False) -> None:
    g = p.add_argument_group("noise")
    if multi:
        g.add_argument("--noise", nargs="+", choices=noise.NOISE_TYPES, default=["uniform-id"])
        g.add_argument("--rates", nargs="+", type=float, default=[0.4])
    else:
        g.add_argument("--noise", choices=noise.NOISE_TYPES)
        g.add_argument("--rate", type=float, default=0.0)
    g.add_argument("--transition", help="transition-matrix JSON for non-uniform noise")
    g.add_argument("--ood-pool", help="dataset directory holding the OOD pool")
    g.add_argument("--flip-map", help="flip-map JSON for pairwise noise")


def _add_config(p: argparse.ArgumentParser, *, multi: bool = False) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--config", help="JSON file with RunConfig fields")
    if multi:
        g.add_argument("--modes", nargs="+", choices=MODES, default=["drpl"])
        g.add_argument("--seeds", nargs="+", type=int, default=[0])
    else:
        g.add_argument("--mode", choices=MODES)
        g.add_argument("--seed", type=int)
    g.add_argument("--gamma1", type=float, help="stage-1 threshold (default 0.05)")
    g.add_argument("--gamma2", type=float, help="stage-2 threshold (default 0.5)")
    g.add_argument("--warmup", type=int)
    for stage in ("1", "2", "3"):
        g.add_argument(f"--epochs-stage{stage}", type=int)
    g.add_argument("--epochs-baseline", type=int)
    g.add_argument("--lambda1", type=float)
    g.add_argument("--lambda2", type=float)
    g.add_argument("--mixup-alpha", type=float, help="default 1.0")
    g.add_argument("--lr", type=float, help="default 0.1")
    g.add_argument("--momentum", type=float, help="default 0.9")
    g.add_argument("--weight-decay", type=float, help="default 1e-4")
    g.add_argument("--batch", type=int, help="default 128")
    g.add_argument("--standardize", action="store_true", default=None,
                   help="z-score inputs with training-set statistics")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drpl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic blob dataset")
    _add_synthetic(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("corrupt", help="apply a noise spec to a dataset directory")
    p.add_argument("--data", required=True)
    _add_noise(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="execute one pipeline mode and write a report")
    p.add_argument("--data", help="training dataset directory (default: synthetic blobs)")
    p.add_argument("--test", help="test dataset directory")
    p.add_argument("--true-transition", help="true label channel JSON for forward-oracle")
    _add_synthetic(p)
    _add_noise(p)
    _add_config(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="recompute detection metrics from a report directory")
    p.add_argument("--report", required=True)
    p.add_argument("--truth", help="ground-truth manifest (default: columns in samples.csv)")

    p = sub.add_parser("sweep", help="grid over modes x noise types x rates x seeds")
    p.add_argument("--data")
    p.add_argument("--test")
    _add_synthetic(p)
    _add_noise(p, multi=True)
    _add_config(p, multi=True)
    p.add_argument("--workers", type=int, help="parallel runs (default: DRPL_THREADS or 1)")
    p.add_argument("--out", required=True)
    return parser


def resolve_config(args, **overrides) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(json.loads(Path(args.config).read_text()))
    for flag, name in CONFIG_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    values.update(overrides)
    return RunConfig.from_json(values)


def _synthetic(args) -> SyntheticSpec:
    return SyntheticSpec(args.classes, args.per_class, args.dims, args.separation,
                         args.test_per_class, args.ood_classes)


def _spec(args, cfg: RunConfig, out, noise_type, rate) -> ExperimentSpec:
    return ExperimentSpec(
        config=cfg, out=str(out), data=args.data, test=args.test, synthetic=_synthetic(args),
        noise=noise_type, rate=rate, transition=args.transition, ood_pool=args.ood_pool,
        flip_map=args.flip_map, true_transition=getattr(args, "true_transition", None),
    )


def cmd_gen(args) -> None:
    task = generate_synthetic(args.classes, args.per_class, args.dims, args.separation, args.seed,
                              test_per_class=args.test_per_class, ood_classes=args.ood_classes)
    out = Path(args.out)
    save_dataset(task.train, out / "train")
    save_dataset(task.test, out / "test")
    if task.pool is not None:
        experiment.save_pool(task.pool, out / "ood_pool")
    print(f"wrote {out}")


def cmd_corrupt(args) -> None:
    data = Path(args.data)
    ds = load_dataset(data)
    if (data / "truth.json").is_file():
        ds = attach_truth(ds, data / "truth.json")
    spec = ExperimentSpec(config=RunConfig(seed=args.seed), noise=args.noise, rate=args.rate,
                          transition=args.transition, ood_pool=args.ood_pool, flip_map=args.flip_map,
                          data=str(data))
    spec.validate()
    pool = experiment.load_pool(args.ood_pool) if args.ood_pool else None
    out_ds, T, fm = experiment.corrupt(spec, ds, pool)
    out = Path(args.out)
    save_dataset(out_ds, out)
    if T is not None:
        noise.save_transition(T, out / "transition.json")
    print(f"wrote {out} ({int((~out_ds.clean).sum())} of {len(out_ds)} samples corrupted)")


def cmd_run(args) -> None:
    cfg = resolve_config(args)
    out = experiment.run_experiment(_spec(args, cfg, args.out, args.noise, args.rate))
    print(f"wrote {out}")


def cmd_eval(args) -> None:
    print(dumps_json(experiment.evaluate_report(args.report, args.truth)), end="")


def _sweep_one(spec: ExperimentSpec) -> str:
    return str(experiment.run_experiment(spec))


def cmd_sweep(args) -> None:
    specs = []
    for mode, kind, rate, seed in itertools.product(args.modes, args.noise, args.rates, args.seeds):
        cfg = resolve_config(args, mode=mode, seed=seed)
        out = Path(args.out) / f"{mode}_{kind}_r{rate:g}_s{seed}"
        spec = _spec(args, cfg, out, kind, rate)
        spec.validate()
        specs.append(spec)
    workers = args.workers or int(os.environ.get("DRPL_THREADS", "1") or 1)
    if workers <= 1:
        done = [_sweep_one(s) for s in specs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_sweep_one, specs))
    for d in done:
        print(f"wrote {d}")


COMMANDS = {"gen": cmd_gen, "corrupt": cmd_corrupt, "run": cmd_run, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except (ValueError, RuntimeError, FloatingPointError, OSError, KeyError) as exc:
        print(f"drpl {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
