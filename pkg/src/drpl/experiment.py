"""One experiment = data source + noise spec + run config + output directory."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, noise, pipeline
from .dataset import Dataset, attach_truth, dumps_json, generate_synthetic, load_dataset, save_dataset
from .errors import ParameterError, ValidationError
from .noise import OodPool, TransitionMatrix
from .pipeline import RunConfig
from .rng import stream

OOD_NOISE = ("uniform-ood", "nonuniform-ood")


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 4
    per_class: int = 500
    dims: int = 16
    separation: float = 6.0
    test_per_class: int = 250
    ood_classes: int = 5
    # held-out classes for linear probes; 0 disables
    probe_classes: int = 0


@dataclass
class ExperimentSpec:
    config: RunConfig = field(default_factory=RunConfig)
    out: str = "out"
    data: str | None = None
    test: str | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    noise: str | None = None
    rate: float = 0.0
    transition: str | None = None
    ood_pool: str | None = None
    flip_map: str | None = None
    # true label channel for forward-oracle when it cannot be derived from the noise spec
    true_transition: str | None = None

    @property
    def seed(self) -> int:
        return self.config.seed

    def validate(self) -> None:
        if not 0.0 <= self.rate < 1.0:
            raise ParameterError(f"rate must be in [0, 1), got {self.rate}")
        if self.noise is not None and self.noise not in noise.NOISE_TYPES:
            raise ParameterError(f"unknown noise type {self.noise!r}")
        if self.noise in OOD_NOISE and self.data is not None and self.ood_pool is None:
            raise ValidationError(f"{self.noise} noise on a dataset directory needs --ood-pool")

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["config"] = self.config.to_json()
        return d


def load_pool(path) -> OodPool:
    ds = load_dataset(path)
    return OodPool(ds.features, ds.observed, ds.num_classes)


def save_pool(pool: OodPool, path) -> None:
    save_dataset(Dataset(pool.features, pool.labels, pool.num_classes), path, with_truth=False)


def _load_sources(spec: ExperimentSpec):
    if spec.data is None:
        s = spec.synthetic
        task = generate_synthetic(s.classes, s.per_class, s.dims, s.separation, spec.seed,
                                  test_per_class=s.test_per_class,
                                  ood_classes=s.ood_classes if spec.noise in OOD_NOISE else 0,
                                  probe_classes=s.probe_classes)
        pool = load_pool(spec.ood_pool) if spec.ood_pool else task.pool
        return task.train, task.test, pool, task.probe
    data = Path(spec.data)
    train = load_dataset(data)
    if (data / "truth.json").is_file():
        train = attach_truth(train, data / "truth.json")
    test = None
    if spec.test:
        test = load_dataset(spec.test, with_truth=(Path(spec.test) / "truth.json").is_file())
    pool = load_pool(spec.ood_pool) if spec.ood_pool else None
    return train, test, pool, None


def noise_transition(spec: ExperimentSpec, ds: Dataset, pool: OodPool | None) -> TransitionMatrix | None:
    """Transition matrix for the non-uniform noise types; synthetic when no file is given."""
    if spec.noise not in ("nonuniform-id", "nonuniform-ood"):
        return None
    if spec.transition:
        return noise.load_transition(spec.transition)
    rng = stream(spec.seed, "noise", 1)
    if spec.noise == "nonuniform-id":
        return noise.build_transition([noise.synthetic_confusion(ds.num_classes, rng)], range(ds.num_classes))
    total = ds.num_classes + pool.num_classes
    conf = noise.synthetic_confusion(total, rng)
    return noise.build_transition([conf], range(ds.num_classes), mode="ood")


def flip_map_for(spec: ExperimentSpec, ds: Dataset) -> dict[int, int] | None:
    if spec.noise != "pairwise":
        return None
    if spec.flip_map:
        return noise.load_flip_map(spec.flip_map)
    return noise.circular_flip_map([range(ds.num_classes)])


def corrupt(spec: ExperimentSpec, ds: Dataset, pool: OodPool | None):
    """Apply the configured noise; returns (dataset, transition, flip_map)."""
    if spec.noise is None:
        return ds, None, None
    T = noise_transition(spec, ds, pool)
    fm = flip_map_for(spec, ds)
    out = noise.inject(ds, spec.noise, spec.rate, stream(spec.seed, "noise"),
                       transition=T, pool=pool, flip_map=fm)
    return out, T, fm


def true_channel(spec: ExperimentSpec, ds: Dataset, T, fm) -> np.ndarray | None:
    """Observed-given-true label channel, when the noise spec defines one."""
    if spec.true_transition:
        return noise.load_transition(spec.true_transition).matrix
    C = ds.num_classes
    if spec.noise is None or spec.rate == 0:
        return np.eye(C)
    if spec.noise == "uniform-id":
        return noise.uniform_transition(C, spec.rate)
    if spec.noise == "nonuniform-id":
        return noise.effective_transition(T, spec.rate)
    if spec.noise == "pairwise":
        return noise.pairwise_transition(C, fm, spec.rate)
    return np.eye(C)  # OOD noise keeps labels


def write_roc_files(report: pipeline.RunReport, ds: Dataset, out: Path) -> None:
    if not ds.has_truth or not (0 < ds.clean.sum() < len(ds)):
        return
    for stage, gamma in (("stage1", report.config["gamma1"]), ("stage2", report.config["gamma2"])):
        post = getattr(report, f"post_{stage}")
        if post is None:
            continue
        curve = metrics.roc(metrics.DetectionOutcome(post, ~ds.clean, gamma))
        metrics.write_roc_csv(curve, out / f"roc_{stage}.csv", gamma=gamma)


@dataclass
class Prepared:
    train: Dataset
    test: Dataset | None
    transition: np.ndarray | None
    probe: tuple[Dataset, Dataset] | None = None


def prepare(spec: ExperimentSpec) -> Prepared:
    """Load or generate the data and apply the noise spec."""
    spec.validate()
    train, test, pool, probe = _load_sources(spec)
    ds, T, fm = corrupt(spec, train, pool)
    channel = true_channel(spec, ds, T, fm) if spec.config.mode == "forward-oracle" else None
    return Prepared(ds, test, channel, probe)


def run_experiment(spec: ExperimentSpec) -> Path:
    """Run one experiment and write its report directory."""
    prep = prepare(spec)
    ds = prep.train
    report = pipeline.run(ds, spec.config, prep.test, transition=prep.transition)
    out = pipeline.write_report(report, ds, spec.out)
    write_roc_files(report, ds, out)
    (out / "experiment.json").write_text(dumps_json(spec.to_json()))
    return out


def evaluate_report(report_dir, truth_path=None) -> dict:
    """Recompute detection metrics from samples.csv and a ground-truth manifest."""
    import csv

    report_dir = Path(report_dir)
    report = pipeline.load_report(report_dir)
    with open(report_dir / "samples.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if truth_path is not None:
        clean = np.asarray(json.loads(Path(truth_path).read_text())["clean"], dtype=bool)
        if clean.shape[0] != len(rows):
            raise ValidationError("truth manifest length does not match the report")
    else:
        if not rows or rows[0]["clean"] == "":
            raise ValidationError("report has no ground truth; pass a truth manifest")
        clean = np.array([r["clean"] == "1" for r in rows])
    noisy = ~clean
    out: dict = {"mode": report.mode, "seed": report.seed,
                 "accuracy_best": report.accuracy_best, "accuracy_last": report.accuracy_last}
    for stage, gamma in (("stage1", report.config["gamma1"]), ("stage2", report.config["gamma2"])):
        col = f"post_{stage}"
        if not rows or rows[0][col] == "":
            continue
        scores = np.array([float(r[col]) for r in rows])
        curve = metrics.roc(metrics.DetectionOutcome(scores, noisy, gamma))
        tpr, fpr = curve.operating_point
        out[stage] = {"auc": curve.auc, "tpr": tpr, "fpr": fpr, "threshold": gamma}
        metrics.write_roc_csv(curve, report_dir / f"roc_{stage}.csv", gamma=gamma)
    if report.losses_final is not None and 0 < clean.sum() < clean.shape[0]:
        out["final_loss"] = {"auc": metrics.auc_score(report.losses_final, noisy)}
    (report_dir / "metrics.json").write_text(dumps_json(out))
    return out
