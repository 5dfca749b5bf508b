"""Small numpy MLP classifier with hand-written backprop.

The classifier is the backbone for all three models of a run. Losses are the
relabeling objective pieces: soft-target cross-entropy, a mean prediction
entropy term and a class-balance KL term. The optimizer is SGD with momentum
and decoupled-from-bias weight decay.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NonFiniteGradientError, ParameterError, ValidationError

PROB_FLOOR = 1e-7
DEFAULT_HIDDEN = (128, 64)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass
class Classifier:
    """Dense ReLU network ending in a softmax over ``sizes[-1]`` classes."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, sizes, rng: np.random.Generator) -> "Classifier":
        """He-uniform initialization (fan-in scaling), zero biases."""
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ParameterError(f"invalid layer sizes {sizes}")
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, sizes) -> "Classifier":
        sizes = [int(s) for s in sizes]
        return cls(
            [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
            [np.zeros(b) for b in sizes[1:]],
        )

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def num_hidden(self) -> int:
        return len(self.weights) - 1

    def params(self) -> list[np.ndarray]:
        """Flat parameter list, ordered (W0, b0, W1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Classifier":
        return Classifier([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())


def mlp(input_dim: int, num_classes: int, rng: np.random.Generator, hidden=DEFAULT_HIDDEN) -> Classifier:
    return Classifier.init([input_dim, *hidden, num_classes], rng)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_input(model: Classifier, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.sizes[0]:
        raise DimensionError(f"expected (n, {model.sizes[0]}) features, got {x.shape}")
    return x


def _forward_cache(model: Classifier, x: np.ndarray):
    activations = [x]
    h = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        activations.append(h)
    logits = h @ model.weights[-1] + model.biases[-1]
    return activations, logits


def logits(model: Classifier, features: np.ndarray) -> np.ndarray:
    return _forward_cache(model, _check_input(model, features))[1]


def forward(model: Classifier, features: np.ndarray) -> np.ndarray:
    """Softmax class probabilities, one row per input row."""
    return softmax(logits(model, features))


def hidden_features(model: Classifier, features: np.ndarray, depth: int) -> np.ndarray:
    """Post-ReLU activations of hidden layer ``depth`` (0-based).

    ``depth == model.num_hidden`` returns the softmax output instead.
    """
    if not 0 <= depth <= model.num_hidden:
        raise DimensionError(f"depth {depth} outside [0, {model.num_hidden}]")
    activations, z = _forward_cache(model, _check_input(model, features))
    if depth == model.num_hidden:
        return softmax(z)
    return activations[depth + 1]


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _check_pair(probabilities, targets):
    p = np.asarray(probabilities, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 2:
        raise DimensionError(f"probabilities {p.shape} vs targets {t.shape}")
    return p, t


def cross_entropy(probabilities, targets) -> tuple[float, np.ndarray]:
    """Soft-target cross-entropy; returns (mean, per-sample)."""
    p, t = _check_pair(probabilities, targets)
    per_sample = 0.0 - (t * np.log(np.clip(p, PROB_FLOOR, 1.0))).sum(axis=1)
    return float(per_sample.mean()), per_sample


def entropy_reg(probabilities) -> float:
    """Mean prediction entropy; 0 for one-hot rows, ln C for uniform rows."""
    p = np.asarray(probabilities, dtype=np.float64)
    if p.ndim != 2:
        raise DimensionError(f"expected a 2-d probability matrix, got {p.shape}")
    return float(-(p * np.log(np.clip(p, PROB_FLOOR, 1.0))).sum(axis=1).mean())


def uniform_prior(num_classes: int) -> np.ndarray:
    return np.full(num_classes, 1.0 / num_classes)


def balance_reg(probabilities, prior=None) -> float:
    """KL(prior || batch-mean prediction)."""
    p = np.asarray(probabilities, dtype=np.float64)
    if p.ndim != 2:
        raise DimensionError(f"expected a 2-d probability matrix, got {p.shape}")
    prior = uniform_prior(p.shape[1]) if prior is None else np.asarray(prior, dtype=np.float64)
    if prior.shape != (p.shape[1],):
        raise DimensionError(f"prior {prior.shape} vs {p.shape[1]} classes")
    if abs(prior.sum() - 1.0) > 1e-6:
        raise ValidationError("prior must sum to 1")
    mean = np.clip(p.mean(axis=0), PROB_FLOOR, 1.0)
    nz = prior > 0
    return float((prior[nz] * np.log(prior[nz] / mean[nz])).sum())


def check_transition(T, num_classes: int | None = None, tol: float = 1e-9) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    if T.ndim != 2 or (num_classes is not None and T.shape[0] != num_classes):
        raise ValidationError(f"transition matrix has shape {T.shape}")
    if np.any(T < 0) or np.any(np.abs(T.sum(axis=1) - 1.0) > tol):
        raise ValidationError("transition matrix must be non-negative and row-stochastic")
    return T


def forward_corrected(probabilities, T) -> np.ndarray:
    """Observed-label probabilities ``p @ T`` under corruption matrix ``T``."""
    p = np.asarray(probabilities, dtype=np.float64)
    T = check_transition(getattr(T, "matrix", T))
    if T.shape != (p.shape[1], p.shape[1]):
        raise DimensionError(f"transition {T.shape} vs {p.shape[1]} classes")
    return p @ T


# ---------------------------------------------------------------------------
# batches and mixup
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    features: np.ndarray
    targets: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.indices = np.asarray(self.indices)
        n = self.features.shape[0]
        if self.targets.shape[0] != n or self.indices.shape[0] != n:
            raise DimensionError("batch components disagree on sample count")
        if np.any(self.targets < -1e-12) or np.any(np.abs(self.targets.sum(axis=1) - 1.0) > 1e-6):
            raise ValidationError("batch targets must be probability rows")


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def mixup(batch: Batch, alpha: float, rng: np.random.Generator, lam: float | None = None) -> Batch:
    """Convex-combine each sample with a randomly permuted partner.

    ``lam`` overrides the Beta(alpha, alpha) draw (used by tests).
    """
    if not alpha > 0:
        raise ParameterError(f"mixup alpha must be positive, got {alpha}")
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(batch.features.shape[0])
    x = lam * batch.features + (1.0 - lam) * batch.features[perm]
    t = lam * batch.targets + (1.0 - lam) * batch.targets[perm]
    return Batch(x, t, batch.indices)


# ---------------------------------------------------------------------------
# objective, gradient and SGD
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossSpec:
    """Selects the terms of the training objective.

    ``transition`` switches the cross-entropy to forward correction.
    """

    lambda1: float = 0.0
    lambda2: float = 0.0
    prior: np.ndarray | None = None
    transition: np.ndarray | None = None


def _softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    return p * (grad_p - (grad_p * p).sum(axis=1, keepdims=True))


def loss_and_grads(model: Classifier, features, targets, spec: LossSpec = LossSpec()):
    """Objective value and gradients, ordered as ``model.params()``."""
    x = _check_input(model, features)
    t = np.asarray(targets, dtype=np.float64)
    activations, z = _forward_cache(model, x)
    p = softmax(z)
    if t.shape != p.shape:
        raise DimensionError(f"targets {t.shape} vs predictions {p.shape}")
    n, c = p.shape

    if spec.transition is None:
        loss, _ = cross_entropy(p, t)
        dz = (p * t.sum(axis=1, keepdims=True) - t) / n
    else:
        T = np.asarray(spec.transition, dtype=np.float64)
        q = p @ T
        loss, _ = cross_entropy(q, t)
        grad_q = np.where(q > PROB_FLOOR, -t / np.maximum(q, PROB_FLOOR), 0.0) / n
        dz = _softmax_backward(p, grad_q @ T.T)

    if spec.lambda1:
        loss += spec.lambda1 * entropy_reg(p)
        logp = np.log(np.clip(p, PROB_FLOOR, 1.0))
        ent_terms = (p * logp).sum(axis=1, keepdims=True)
        dz = dz - spec.lambda1 * p * (logp - ent_terms) / n

    if spec.lambda2:
        prior = uniform_prior(c) if spec.prior is None else np.asarray(spec.prior, dtype=np.float64)
        loss += spec.lambda2 * balance_reg(p, prior)
        mean = p.mean(axis=0)
        grad_mean = np.where(mean > PROB_FLOOR, -prior / np.maximum(mean, PROB_FLOOR), 0.0)
        dz = dz + spec.lambda2 * _softmax_backward(p, np.broadcast_to(grad_mean / n, p.shape))

    grads_w, grads_b = [], []
    delta = dz
    for layer in range(len(model.weights) - 1, -1, -1):
        a = activations[layer]
        grads_w.append(a.T @ delta)
        grads_b.append(delta.sum(axis=0))
        if layer:
            delta = (delta @ model.weights[layer].T) * (a > 0)
    grads = []
    for gw, gb in zip(reversed(grads_w), reversed(grads_b)):
        grads.extend((gw, gb))
    return float(loss), grads


@dataclass
class OptState:
    """SGD momentum buffers plus hyperparameters. Biases get no weight decay."""

    buffers: list[np.ndarray] = field(default_factory=list)
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4

    @classmethod
    def for_model(cls, model: Classifier, lr=0.1, momentum=0.9, weight_decay=1e-4) -> "OptState":
        return cls([np.zeros_like(p) for p in model.params()], lr, momentum, weight_decay)


def apply_step(model: Classifier, opt: OptState, grads) -> None:
    for i, (param, grad, buf) in enumerate(zip(model.params(), grads, opt.buffers)):
        if i % 2 == 0 and opt.weight_decay:
            grad = grad + opt.weight_decay * param
        buf *= opt.momentum
        buf += grad
        param -= opt.lr * buf


def backward_and_step(model: Classifier, opt: OptState, batch: Batch, spec: LossSpec = LossSpec()):
    """One SGD step in place. Returns ``(model, pre-step loss)``."""
    loss, grads = loss_and_grads(model, batch.features, batch.targets, spec)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        bad = [i for i, g in enumerate(grads) if not np.all(np.isfinite(g))]
        raise NonFiniteGradientError(f"non-finite loss/gradient (loss={loss}, params {bad})")
    apply_step(model, opt, grads)
    return model, loss
