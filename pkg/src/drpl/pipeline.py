"""Two-stage label-noise detection followed by semi-supervised training.

Stage 1 trains ``h_phi`` with the relabeling objective (cross-entropy on
observed labels for ``warmup`` epochs, then on its own soft predictions,
both plus the entropy/balance regularizers) and splits the data with a Beta
mixture over the loss against the *original* labels. Stage 2 trains
``h_varphi`` semi-supervised on that split and re-splits at the MAP
threshold. The final model ``h_theta`` is trained semi-supervised on the
stage-2 split.

Baseline and oracle modes reuse the same training loop.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import bmm, metrics, nn
from .dataset import Dataset, dumps_json
from .errors import InsufficientCleanSetError, ParameterError, ValidationError
from .rng import stream

MODES = ("drpl", "ce-baseline", "mixup-baseline", "oracle-ssl", "forward-oracle")


@dataclass
class RunConfig:
    mode: str = "drpl"
    warmup: int = 15
    epochs_stage1: int = 40
    epochs_stage2: int = 60
    epochs_stage3: int = 80
    # epochs for ce/mixup/forward baselines; None means epochs_stage3
    epochs_baseline: int | None = None
    lr: float = 0.1
    lr_drops: tuple[float, ...] = (0.5, 0.8)
    lr_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lambda1: float = 1.0
    lambda2: float = 1.0
    gamma1: float = 0.05
    gamma2: float = 0.5
    mixup_alpha: float = 1.0
    batch: int = 128
    bmm_iters: int = bmm.DEFAULT_ITERS
    hidden: tuple[int, ...] = nn.DEFAULT_HIDDEN
    # z-score inputs with training-set statistics; folded back into the returned model
    standardize: bool = False
    seed: int = 0

    def __post_init__(self):
        self.lr_drops = tuple(float(d) for d in self.lr_drops)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ParameterError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not 0 <= self.warmup < self.epochs_stage1:
            raise ParameterError("warmup must be in [0, epochs_stage1)")
        for name in ("gamma1", "gamma2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ParameterError(f"{name} must be in (0, 1)")
        if self.mixup_alpha <= 0 or self.batch < 1 or self.lr < 0:
            raise ParameterError("mixup_alpha > 0, batch >= 1 and lr >= 0 are required")
        if min(self.epochs_stage1, self.epochs_stage2, self.epochs_stage3, self.baseline_epochs) < 1:
            raise ParameterError("every stage needs at least one epoch")

    @property
    def baseline_epochs(self) -> int:
        return self.epochs_stage3 if self.epochs_baseline is None else self.epochs_baseline

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["lr_drops"] = list(self.lr_drops)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ParameterError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)

    def lr_at(self, epoch: int, total: int) -> float:
        drops = sum(epoch >= round(d * total) for d in self.lr_drops)
        return self.lr / self.lr_factor ** drops


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, features) -> "Standardizer":
        sd = features.std(axis=0)
        sd[sd == 0] = 1.0
        return cls(features.mean(axis=0), sd)

    def apply(self, ds: Dataset) -> Dataset:
        return ds.replace(features=(ds.features - self.mean) / self.scale)

    def fold(self, model: nn.Classifier) -> nn.Classifier:
        """Equivalent model that takes raw (unscaled) inputs."""
        out = model.copy()
        w = model.weights[0] / self.scale[:, None]
        out.weights[0] = w
        out.biases[0] = model.biases[0] - self.mean @ w
        return out


@dataclass
class SoftLabels:
    rows: np.ndarray
    epoch: int = -1

    def __post_init__(self):
        if np.any(np.abs(self.rows.sum(axis=1) - 1.0) > 1e-6):
            raise ValidationError("soft labels must be probability rows")


@dataclass
class StageResult:
    model: nn.Classifier
    losses: np.ndarray
    mixture: bmm.BetaMixture | None = None
    posterior: np.ndarray | None = None
    split: bmm.Split | None = None
    soft_labels: SoftLabels | None = None


@dataclass
class RunReport:
    config: dict
    seed: int
    mode: str
    epochs: list[dict] = field(default_factory=list)
    losses_stage1: list[float] | None = None
    post_stage1: list[float] | None = None
    losses_stage2: list[float] | None = None
    post_stage2: list[float] | None = None
    # per-sample CE of the final model against observed labels
    losses_final: list[float] | None = None
    final_set: list[str] | None = None
    sizes: dict = field(default_factory=dict)
    accuracy_best: float | None = None
    accuracy_last: float | None = None
    detection: dict = field(default_factory=dict)
    mixtures: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return dumps_json(self.to_json())

    @classmethod
    def from_json(cls, doc: dict) -> "RunReport":
        return cls(**doc)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


TargetFn = Callable[[int, nn.Classifier], np.ndarray]


class _History:
    def __init__(self, test: Dataset | None):
        self.test = test
        self.rows: list[dict] = []

    def log(self, stage: str, epoch: int, lr: float, loss: float, model: nn.Classifier) -> None:
        row = {"stage": stage, "epoch": epoch, "lr": lr, "train_loss": loss,
               "test_acc": metrics.accuracy(model, self.test) if self.test is not None else None}
        self.rows.append(row)


def _train(model, features, targets_fn: TargetFn, epochs: int, cfg: RunConfig, spec: nn.LossSpec,
           *, stage: str, seed_tag: int, history: _History, use_mixup: bool) -> nn.Classifier:
    opt = nn.OptState.for_model(model, cfg.lr, cfg.momentum, cfg.weight_decay)
    shuffle = stream(cfg.seed, "pseudo", seed_tag)
    mix = stream(cfg.seed, "mixup", seed_tag)
    n = features.shape[0]
    for epoch in range(epochs):
        opt.lr = cfg.lr_at(epoch, epochs)
        targets = targets_fn(epoch, model)
        order = shuffle.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch):
            idx = order[start:start + cfg.batch]
            batch = nn.Batch(features[idx], targets[idx], idx)
            if use_mixup:
                batch = nn.mixup(batch, cfg.mixup_alpha, mix)
            _, loss = nn.backward_and_step(model, opt, batch, spec)
            losses.append(loss * idx.shape[0])
        history.log(stage, epoch, opt.lr, float(np.sum(losses) / n), model)
    return model


def _new_model(ds: Dataset, cfg: RunConfig, tag: int) -> nn.Classifier:
    return nn.mlp(ds.dims, ds.num_classes, stream(cfg.seed, "init", tag), cfg.hidden)


def _reg_spec(cfg: RunConfig) -> nn.LossSpec:
    return nn.LossSpec(cfg.lambda1, cfg.lambda2)


def observed_losses(model: nn.Classifier, ds: Dataset) -> np.ndarray:
    """Per-sample cross-entropy against the original observed labels."""
    _, per = nn.cross_entropy(nn.forward(model, ds.features), nn.one_hot(ds.observed, ds.num_classes))
    return per


def _detect(model, ds: Dataset, cfg: RunConfig, gamma: float):
    losses = observed_losses(model, ds)
    normed = bmm.normalize_losses(losses)
    mixture = bmm.fit(normed, cfg.bmm_iters)
    post = bmm.posterior(mixture, normed)
    sp = bmm.split(ds, post, gamma)
    return losses, mixture, post.noisy, sp


def _check_clean_size(sp: bmm.Split, ds: Dataset, stage: str) -> None:
    if sp.labeled.shape[0] < 2 * ds.num_classes:
        raise InsufficientCleanSetError(
            f"{stage}: only {sp.labeled.shape[0]} samples selected as clean "
            f"(need >= {2 * ds.num_classes}); consider raising the threshold")


def stage1_relabel(ds: Dataset, cfg: RunConfig, *, history: _History | None = None) -> StageResult:
    history = history or _History(None)
    model = _new_model(ds, cfg, 1)
    observed = nn.one_hot(ds.observed, ds.num_classes)
    soft = SoftLabels(observed)

    def targets(epoch, m):
        if epoch < cfg.warmup:
            return observed
        soft.rows = nn.forward(m, ds.features)
        soft.epoch = epoch
        return soft.rows

    _train(model, ds.features, targets, cfg.epochs_stage1, cfg, _reg_spec(cfg),
           stage="stage1", seed_tag=1, history=history, use_mixup=False)
    losses, mixture, post, sp = _detect(model, ds, cfg, cfg.gamma1)
    _check_clean_size(sp, ds, "stage 1")
    return StageResult(model, losses, mixture, post, sp, soft)


def ssl_train(ds: Dataset, sp: bmm.Split, cfg: RunConfig, epochs: int, *, seed_tag: int,
              history: _History | None = None, stage: str = "ssl") -> nn.Classifier:
    """Pseudo-label SSL: fixed labels on ``sp.labeled``, soft predictions elsewhere.

    Pseudo-labels are refreshed once per epoch from the current model; every
    batch is mixed up.
    """
    if sp.labeled.shape[0] == 0:
        raise ValidationError("labeled set is empty")
    history = history or _History(None)
    model = _new_model(ds, cfg, seed_tag)
    targets_all = np.full((len(ds), ds.num_classes), 1.0 / ds.num_classes)
    targets_all[sp.labeled] = nn.one_hot(sp.labels, ds.num_classes)
    unl = sp.unlabeled
    unl_x = ds.features[unl]

    def targets(epoch, m):
        if unl.shape[0]:
            targets_all[unl] = nn.forward(m, unl_x)
        return targets_all

    return _train(model, ds.features, targets, epochs, cfg, _reg_spec(cfg),
                  stage=stage, seed_tag=seed_tag, history=history, use_mixup=True)


def stage2_detect(ds: Dataset, first: StageResult, cfg: RunConfig, *,
                  history: _History | None = None) -> StageResult:
    model = ssl_train(ds, first.split, cfg, cfg.epochs_stage2, seed_tag=2, history=history, stage="stage2")
    losses, mixture, post, sp = _detect(model, ds, cfg, cfg.gamma2)
    _check_clean_size(sp, ds, "stage 2")
    return StageResult(model, losses, mixture, post, sp)


def _supervised(ds: Dataset, cfg: RunConfig, spec: nn.LossSpec, *, mixup: bool, history: _History,
                stage: str) -> nn.Classifier:
    model = _new_model(ds, cfg, 3)
    observed = nn.one_hot(ds.observed, ds.num_classes)
    return _train(model, ds.features, lambda e, m: observed, cfg.baseline_epochs, cfg, spec,
                  stage=stage, seed_tag=3, history=history, use_mixup=mixup)


def _floats(a) -> list[float]:
    return [float(v) for v in a]


def _detection_summary(ds: Dataset, scores, gamma) -> dict:
    out = metrics.DetectionOutcome(scores, ~ds.clean, gamma)
    if out.noisy.all() or not out.noisy.any():
        return {}
    curve = metrics.roc(out)
    tpr, fpr = curve.operating_point
    return {"auc": curve.auc, "tpr": tpr, "fpr": fpr, "threshold": gamma}


def run(ds: Dataset, cfg: RunConfig, test: Dataset | None = None, *, transition=None) -> RunReport:
    return execute(ds, cfg, test, transition=transition)[0]


def execute(ds: Dataset, cfg: RunConfig, test: Dataset | None = None, *,
            transition=None) -> tuple[RunReport, nn.Classifier]:
    """Execute one pipeline mode end to end; returns the report and final model.

    Ground truth on ``ds`` is read only by the oracle-ssl mode (for its
    split) and afterwards for the detection metrics in the report.
    ``transition`` is the true label channel for forward-oracle.
    """
    cfg.validate()
    train_view = ds.without_truth()
    scaler = None
    if cfg.standardize:
        scaler = Standardizer.fit(train_view.features)
        train_view = scaler.apply(train_view)
        test = None if test is None else scaler.apply(test)
    history = _History(test)
    report = RunReport(config=cfg.to_json(), seed=cfg.seed, mode=cfg.mode)

    if cfg.mode == "drpl":
        first = stage1_relabel(train_view, cfg, history=history)
        second = stage2_detect(train_view, first, cfg, history=history)
        final_split = second.split
        model = ssl_train(train_view, final_split, cfg, cfg.epochs_stage3, seed_tag=4,
                          history=history, stage="final")
        report.losses_stage1 = _floats(first.losses)
        report.post_stage1 = _floats(first.posterior)
        report.losses_stage2 = _floats(second.losses)
        report.post_stage2 = _floats(second.posterior)
        report.mixtures = {"stage1": first.mixture.to_json(), "stage2": second.mixture.to_json()}
        report.sizes = {
            "stage1": dict(zip(("labeled", "unlabeled"), first.split.sizes)),
            "stage2": dict(zip(("labeled", "unlabeled"), second.split.sizes)),
        }
    elif cfg.mode == "oracle-ssl":
        if not ds.has_truth:
            raise ValidationError("oracle-ssl needs the ground-truth clean mask")
        labeled = np.flatnonzero(ds.clean)
        final_split = bmm.Split(labeled, ds.observed[labeled].copy(), np.flatnonzero(~ds.clean))
        model = ssl_train(train_view, final_split, cfg, cfg.epochs_stage3, seed_tag=4,
                          history=history, stage="final")
        report.sizes = {"final": dict(zip(("labeled", "unlabeled"), final_split.sizes))}
    else:
        final_split = None
        if cfg.mode == "forward-oracle":
            if transition is None:
                raise ValidationError("forward-oracle needs the true transition matrix")
            T = nn.check_transition(getattr(transition, "matrix", transition), ds.num_classes)
            spec = nn.LossSpec(transition=T)
        else:
            spec = nn.LossSpec()
        model = _supervised(train_view, cfg, spec, mixup=cfg.mode == "mixup-baseline",
                            history=history, stage="baseline")

    report.epochs = history.rows
    report.losses_final = _floats(observed_losses(model, train_view))
    if final_split is not None:
        final_set = np.full(len(ds), "u")
        final_set[final_split.labeled] = "l"
        report.final_set = final_set.tolist()
    if test is not None:
        scored = [r["test_acc"] for r in history.rows if r["stage"] in ("final", "baseline")]
        report.accuracy_best = max(scored)
        report.accuracy_last = scored[-1]
    if ds.has_truth:
        if report.post_stage1 is not None:
            report.detection["stage1"] = _detection_summary(ds, report.post_stage1, cfg.gamma1)
            report.detection["stage2"] = _detection_summary(ds, report.post_stage2, cfg.gamma2)
        if 0 < ds.clean.sum() < len(ds):
            report.detection["final_loss"] = {"auc": metrics.auc_score(report.losses_final, ~ds.clean)}
    if scaler is not None:
        model = scaler.fold(model)
    return report, model


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

SAMPLE_COLUMNS = ("id", "true_label", "observed_label", "clean", "loss_stage1", "post_stage1",
                  "loss_stage2", "post_stage2", "final_set")
EPOCH_COLUMNS = ("stage", "epoch", "lr", "train_loss", "test_acc")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def sample_rows(report: RunReport, ds: Dataset):
    col = lambda v, i: None if v is None else v[i]  # noqa: E731
    for i in range(len(ds)):
        yield (
            int(ds.ids[i]),
            None if ds.true is None else int(ds.true[i]),
            int(ds.observed[i]),
            None if ds.clean is None else bool(ds.clean[i]),
            col(report.losses_stage1, i), col(report.post_stage1, i),
            col(report.losses_stage2, i), col(report.post_stage2, i),
            col(report.final_set, i),
        )


def _write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_report(report: RunReport, ds: Dataset, out_dir) -> Path:
    """report.json, epochs.csv and samples.csv, each written atomically."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "epochs.csv", _csv_text(EPOCH_COLUMNS, ([r[c] for c in EPOCH_COLUMNS] for r in report.epochs)))
    _write(out / "samples.csv", _csv_text(SAMPLE_COLUMNS, sample_rows(report, ds)))
    _write(out / "report.json", report.dumps())
    return out


def load_report(path) -> RunReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return RunReport.from_json(json.loads(path.read_text()))
