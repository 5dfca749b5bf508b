"""Two-component Beta mixture over normalized per-sample losses.

Component 1 models clean samples (low loss), component 2 noisy ones. The
fit is EM with a weighted method-of-moments M-step, initialized by a median
split and run for a fixed number of iterations so results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, logsumexp

from .errors import ParameterError, ValidationError

LOSS_EPS = 1e-4
SHAPE_MIN, SHAPE_MAX = 0.5, 300.0
WEIGHT_FLOOR = 1e-3
# component means closer than this are treated as one unresolved mode
MIN_MEAN_GAP = 0.05
DEFAULT_ITERS = 10


def normalize_losses(raw) -> np.ndarray:
    """Min-max scale into [LOSS_EPS, 1 - LOSS_EPS]; a constant vector maps to 0.5."""
    x = np.asarray(raw, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 2:
        raise ValidationError("need a 1-d loss vector of length >= 2")
    if not np.all(np.isfinite(x)):
        raise ValidationError("losses contain NaN or inf")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full_like(x, 0.5)
    return np.clip((x - lo) / (hi - lo), LOSS_EPS, 1.0 - LOSS_EPS)


def beta_logpdf(x, a, b):
    x = np.asarray(x, dtype=np.float64)
    return (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - betaln(a, b)


def _moments_to_shapes(mean: float, var: float) -> tuple[float, float]:
    mean = min(max(mean, LOSS_EPS), 1.0 - LOSS_EPS)
    var = max(var, 1e-12)
    concentration = mean * (1.0 - mean) / var - 1.0
    # clamp alpha + beta jointly so the mean survives when the shape box allows it
    lo = SHAPE_MIN / min(mean, 1.0 - mean)
    hi = SHAPE_MAX / max(mean, 1.0 - mean)
    concentration = min(max(concentration, lo), hi) if lo <= hi else lo
    a = np.clip(mean * concentration, SHAPE_MIN, SHAPE_MAX)
    b = np.clip((1.0 - mean) * concentration, SHAPE_MIN, SHAPE_MAX)
    return float(a), float(b)


@dataclass(frozen=True)
class BetaMixture:
    weights: tuple[float, float]
    alphas: tuple[float, float]
    betas: tuple[float, float]
    iterations: int = 0
    log_likelihoods: tuple[float, ...] = ()
    degenerate: bool = False

    @property
    def means(self) -> tuple[float, float]:
        return tuple(a / (a + b) for a, b in zip(self.alphas, self.betas))

    @property
    def log_likelihood(self) -> float:
        return self.log_likelihoods[-1] if self.log_likelihoods else float("nan")

    def component_log_density(self, x) -> np.ndarray:
        """(2, n) array of log(weight_k * Beta(x; alpha_k, beta_k))."""
        x = np.clip(np.asarray(x, dtype=np.float64), LOSS_EPS, 1.0 - LOSS_EPS)
        return np.stack([
            np.log(w) + beta_logpdf(x, a, b) for w, a, b in zip(self.weights, self.alphas, self.betas)
        ])

    def to_json(self) -> dict:
        return {
            "weights": list(self.weights),
            "alphas": list(self.alphas),
            "betas": list(self.betas),
            "iterations": self.iterations,
            "log_likelihoods": list(self.log_likelihoods),
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "BetaMixture":
        return cls(tuple(doc["weights"]), tuple(doc["alphas"]), tuple(doc["betas"]),
                   int(doc.get("iterations", 0)), tuple(doc.get("log_likelihoods", ())),
                   bool(doc.get("degenerate", False)))


def _m_step(x: np.ndarray, resp: np.ndarray):
    weights, alphas, betas = [], [], []
    for r in resp:
        total = r.sum()
        if total <= 0:
            weights.append(0.0)
            alphas.append(SHAPE_MIN)
            betas.append(SHAPE_MIN)
            continue
        mean = float((r * x).sum() / total)
        var = float((r * (x - mean) ** 2).sum() / total)
        a, b = _moments_to_shapes(mean, var)
        weights.append(total / x.shape[0])
        alphas.append(a)
        betas.append(b)
    w = np.maximum(np.asarray(weights), WEIGHT_FLOOR)
    w /= w.sum()
    return tuple(float(v) for v in w), tuple(alphas), tuple(betas)


def fit(losses, iters: int = DEFAULT_ITERS) -> BetaMixture:
    """EM fit on losses already mapped into (0, 1)."""
    x = np.asarray(losses, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 10:
        raise ValidationError("need at least 10 losses to fit a mixture")
    if not np.all(np.isfinite(x)):
        raise ValidationError("losses contain NaN or inf")
    if iters < 1:
        raise ParameterError("iters must be >= 1")
    x = np.clip(x, LOSS_EPS, 1.0 - LOSS_EPS)

    low = x <= np.median(x)
    if low.all():
        # ties at the median: split by rank instead
        low = np.zeros_like(low)
        low[np.argsort(x, kind="stable")[: x.shape[0] // 2]] = True
    resp = np.stack([low, ~low]).astype(np.float64)

    lls = []
    for _ in range(iters):
        bmm = BetaMixture(*_m_step(x, resp))
        dens = bmm.component_log_density(x)
        total = logsumexp(dens, axis=0)
        lls.append(float(total.sum()))
        resp = np.exp(dens - total)

    weights, alphas, betas = bmm.weights, bmm.alphas, bmm.betas
    if alphas[0] / (alphas[0] + betas[0]) > alphas[1] / (alphas[1] + betas[1]):
        weights, alphas, betas = weights[::-1], alphas[::-1], betas[::-1]
    means = [a / (a + b) for a, b in zip(alphas, betas)]
    degenerate = min(weights) <= WEIGHT_FLOOR * (1 + 1e-9) or means[1] - means[0] < MIN_MEAN_GAP
    return BetaMixture(weights, alphas, betas, iters, tuple(lls), bool(degenerate))


@dataclass
class PosteriorVector:
    noisy: np.ndarray
    losses: np.ndarray

    @property
    def clean(self) -> np.ndarray:
        return 1.0 - self.noisy

    def __len__(self) -> int:
        return self.noisy.shape[0]


def posterior(bmm: BetaMixture, losses) -> PosteriorVector:
    """p(noisy component | loss), computed in log space."""
    x = np.clip(np.asarray(losses, dtype=np.float64), LOSS_EPS, 1.0 - LOSS_EPS)
    dens = bmm.component_log_density(x)
    return PosteriorVector(np.exp(dens[1] - logsumexp(dens, axis=0)), x)


@dataclass
class Split:
    labeled: np.ndarray
    labels: np.ndarray
    unlabeled: np.ndarray
    gamma: float = field(default=0.5)

    @property
    def sizes(self) -> tuple[int, int]:
        return int(self.labeled.shape[0]), int(self.unlabeled.shape[0])


def split(ds, post, gamma: float) -> Split:
    """Labeled iff p(noisy) <= gamma. Indices are positions in ``ds``."""
    p = post.noisy if isinstance(post, PosteriorVector) else np.asarray(post, dtype=np.float64)
    if p.shape != (len(ds),):
        raise ValidationError(f"posterior length {p.shape} vs dataset {len(ds)}")
    if not 0.0 < gamma < 1.0:
        raise ParameterError(f"gamma must be in (0, 1), got {gamma}")
    mask = p <= gamma
    labeled = np.flatnonzero(mask)
    return Split(labeled, ds.observed[labeled].copy(), np.flatnonzero(~mask), gamma)
