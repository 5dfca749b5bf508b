"""Detection and classification metrics.

Detection treats *noisy* as the positive class: a sample is flagged when its
score (posterior p(noisy) or raw loss) exceeds the operating threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .dataset import Dataset
from .errors import DimensionError, ValidationError


@dataclass
class DetectionOutcome:
    scores: np.ndarray
    noisy: np.ndarray
    threshold: float = 0.5

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.noisy = np.asarray(self.noisy, dtype=bool)
        if self.scores.shape != self.noisy.shape or self.scores.ndim != 1:
            raise DimensionError("scores and noisy flags must be equal-length vectors")

    def check(self) -> None:
        if self.noisy.all() or not self.noisy.any():
            raise ValidationError("ground truth needs both clean and noisy samples")


def tpr_fpr(outcome: DetectionOutcome) -> tuple[float, float]:
    outcome.check()
    flagged = outcome.scores > outcome.threshold
    tpr = (flagged & outcome.noisy).sum() / outcome.noisy.sum()
    fpr = (flagged & ~outcome.noisy).sum() / (~outcome.noisy).sum()
    return float(tpr), float(fpr)


@dataclass
class RocCurve:
    thresholds: np.ndarray  # point i counts scores > thresholds[i] as flagged
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float
    operating_point: tuple[float, float]

    def rows(self):
        for th, t, f in zip(self.thresholds, self.tpr, self.fpr):
            yield {"threshold": float(th), "fpr": float(f), "tpr": float(t)}


def roc(outcome: DetectionOutcome) -> RocCurve:
    """Full threshold sweep over the unique scores; AUC by the trapezoid rule.

    Tied scores move together, so ties contribute a diagonal segment (the
    average of the orderings).
    """
    outcome.check()
    order = np.argsort(-outcome.scores, kind="stable")
    s = outcome.scores[order]
    y = outcome.noisy[order]
    # last index of every run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.shape[0] - 1]
    tp = np.cumsum(y)[ends]
    fp = np.cumsum(~y)[ends]
    P, N = y.sum(), (~y).sum()
    tpr = np.r_[0.0, tp / P]
    fpr = np.r_[0.0, fp / N]
    # the first point flags nothing; afterwards flag every score >= s[end]
    thresholds = np.r_[np.inf, np.nextafter(s[ends], -np.inf)]
    auc = float(np.trapezoid(tpr, fpr)) if hasattr(np, "trapezoid") else float(np.trapz(tpr, fpr))
    return RocCurve(thresholds, tpr, fpr, auc, tpr_fpr(outcome))


def auc_score(scores, noisy) -> float:
    return roc(DetectionOutcome(scores, noisy)).auc


def predict(model: nn.Classifier, features) -> np.ndarray:
    return np.argmax(nn.logits(model, features), axis=1)


def accuracy(model: nn.Classifier, test: Dataset) -> float:
    """Fraction of argmax predictions equal to the true labels."""
    if len(test) == 0:
        raise ValidationError("empty test set")
    labels = test.true if test.true is not None else test.observed
    return float(np.mean(predict(model, test.features) == labels))


@dataclass(frozen=True)
class ProbeConfig:
    steps: int = 200
    lr: float = 0.1


def linear_probe(model: nn.Classifier, depth: int, source: Dataset | None,
                 target: tuple[Dataset, Dataset], cfg: ProbeConfig = ProbeConfig()) -> float:
    """Accuracy of softmax regression on frozen features of hidden layer ``depth``.

    ``target`` is a (train, test) pair. Features are standardized with the
    train-split statistics; the probe starts from zero weights and runs
    full-batch gradient descent, so the result is deterministic.
    """
    if not 0 <= depth <= model.num_hidden:
        raise DimensionError(f"depth {depth} outside [0, {model.num_hidden}]")
    train, test = target
    if source is not None and source.class_ids and train.class_ids:
        overlap = set(source.class_ids) & set(train.class_ids)
        if overlap:
            raise ValidationError(f"target classes overlap source classes: {sorted(overlap)}")
    f_train = nn.hidden_features(model, train.features, depth)
    f_test = nn.hidden_features(model, test.features, depth)
    mu = f_train.mean(axis=0)
    sd = f_train.std(axis=0)
    sd[sd == 0] = 1.0
    f_train = (f_train - mu) / sd
    f_test = (f_test - mu) / sd

    labels = train.true if train.true is not None else train.observed
    probe = nn.Classifier.zeros([f_train.shape[1], train.num_classes])
    opt = nn.OptState.for_model(probe, lr=cfg.lr, momentum=0.0, weight_decay=0.0)
    targets = nn.one_hot(labels, train.num_classes)
    for _ in range(cfg.steps):
        _, grads = nn.loss_and_grads(probe, f_train, targets)
        nn.apply_step(probe, opt, grads)
    truth = test.true if test.true is not None else test.observed
    return float(np.mean(predict(probe, f_test) == truth))


def write_roc_csv(curve: RocCurve, path, *, gamma: float | None = None) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr", "operating"])
        for row in curve.rows():
            w.writerow([repr(row["threshold"]), repr(row["fpr"]), repr(row["tpr"]), 0])
        t, f = curve.operating_point
        w.writerow([repr(float(gamma)) if gamma is not None else "", repr(f), repr(t), 1])
