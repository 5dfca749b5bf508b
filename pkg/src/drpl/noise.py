"""Label-noise injection with exact per-class clean counts.

Every injector corrupts exactly ``noisy_count(r, n_c)`` samples of each true
class ``c`` (chosen uniformly without replacement) and leaves the rest
bit-identical. In-distribution (ID) noise rewrites the observed label;
out-of-distribution (OOD) noise replaces the features with a sample from an
external pool and keeps the label.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import ParameterError, ValidationError

NOISE_TYPES = ("uniform-id", "nonuniform-id", "uniform-ood", "nonuniform-ood", "pairwise")
ROW_TOL = 1e-9


@dataclass
class TransitionMatrix:
    """Row-stochastic corruption matrix; row index is the true class."""

    matrix: np.ndarray
    classes: list = field(default_factory=list)
    # rows that had no mass left after truncation and were made uniform
    fallback_rows: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValidationError("transition matrix must be 2-d")
        if np.any(self.matrix < 0) or np.any(np.abs(self.matrix.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValidationError("transition matrix rows must be non-negative and sum to 1")
        if not self.classes:
            self.classes = list(range(self.matrix.shape[1]))

    @property
    def shape(self):
        return self.matrix.shape

    def to_json(self) -> dict:
        return {"rows": self.matrix.tolist(), "classes": list(self.classes)}


@dataclass
class OodPool:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.features.shape[0],):
            raise ValidationError("pool labels/features length mismatch")

    @property
    def by_class(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == k) for k in range(self.num_classes)]


def noisy_count(r: float, n: int) -> int:
    """round(r * n), halves rounded up."""
    return int(math.floor(r * n + 0.5))


def _check_rate(r: float, allow_one: bool = False) -> None:
    hi_ok = r <= 1.0 if allow_one else r < 1.0
    if not (0.0 <= r and hi_ok):
        raise ParameterError(f"noise rate must be in [0, 1{']' if allow_one else ')'}, got {r}")


def _require_truth(ds: Dataset) -> Dataset:
    if ds.true is None:
        return ds.replace(true=ds.observed.copy(), clean=np.ones(len(ds), dtype=bool))
    if ds.clean is None:
        return ds.replace(clean=ds.observed == ds.true)
    return ds


def _pick_per_class(ds: Dataset, r: float, rng: np.random.Generator, classes=None):
    """Yield (class, selected indices) with exactly noisy_count samples each."""
    per_class = ds.class_indices(ds.true)
    for c in range(ds.num_classes) if classes is None else classes:
        idx = per_class[c]
        k = noisy_count(r, idx.shape[0])
        yield c, np.sort(rng.choice(idx, size=k, replace=False)) if k else idx[:0]


def _relabel(ds: Dataset, picks) -> Dataset:
    observed = ds.observed.copy()
    clean = ds.clean.copy()
    for idx, labels in picks:
        observed[idx] = labels
        clean[idx] = False
    return ds.replace(observed=observed, clean=clean & (observed == ds.true))


# ---------------------------------------------------------------------------
# transition matrices
# ---------------------------------------------------------------------------


def _normalize_rows(m: np.ndarray, exclude_diag: bool, fallbacks: list[int]) -> np.ndarray:
    out = np.array(m, dtype=np.float64)
    for i, s in enumerate(out.sum(axis=1)):
        if s > 0:
            out[i] /= s
            continue
        fallbacks.append(i)
        out[i] = 1.0
        if exclude_diag and i < out.shape[1]:
            out[i, i] = 0.0
        out[i] /= out[i].sum()
    return out


def build_transition(confusions, keep_classes, mode: str = "id") -> TransitionMatrix:
    """Average confusion matrices and reduce them to a noise transition matrix.

    ``mode="id"`` keeps rows and columns ``keep_classes`` and zeroes the
    diagonal so that every draw changes the label. ``mode="ood"`` keeps rows
    ``keep_classes`` and the complementary columns.
    """
    mats = [np.asarray(m, dtype=np.float64) for m in confusions]
    if not mats:
        raise ValidationError("need at least one confusion matrix")
    size = mats[0].shape
    if len(size) != 2 or size[0] != size[1] or any(m.shape != size for m in mats):
        raise ValidationError("confusion matrices must be square and share one shape")
    if any(np.any(m < 0) for m in mats):
        raise ValidationError("confusion counts must be non-negative")
    keep = sorted(int(k) for k in keep_classes)
    if not keep or keep[0] < 0 or keep[-1] >= size[0]:
        raise ValidationError("keep_classes must be a non-empty subset of the class range")
    if mode not in ("id", "ood"):
        raise ParameterError(f"mode must be 'id' or 'ood', got {mode!r}")

    fallbacks: list[int] = []
    avg = _normalize_rows(np.mean(mats, axis=0), False, [])
    if mode == "id":
        cols = keep
        reduced = avg[np.ix_(keep, cols)]
        np.fill_diagonal(reduced, 0.0)
    else:
        cols = [c for c in range(size[0]) if c not in set(keep)]
        if not cols:
            raise ValidationError("OOD mode needs at least one class outside keep_classes")
        reduced = avg[np.ix_(keep, cols)]
    out = _normalize_rows(reduced, mode == "id", fallbacks)
    return TransitionMatrix(out, cols, fallbacks)


def synthetic_confusion(num_classes: int, rng: np.random.Generator, *, diag: float = 0.6,
                        decay: float = 0.5, total: int = 1000) -> np.ndarray:
    """Diagonally dominant confusion counts with uneven off-diagonal mass.

    Each row spreads ``1 - diag`` over the other classes in geometric shares
    ``1, decay, decay**2, ...`` assigned in a random order, so every class has
    one "most similar" class. ``decay=1`` gives uniform confusions.
    """
    if num_classes < 2:
        raise ParameterError("need at least 2 classes")
    if not 0.0 < decay <= 1.0 or not 0.0 < diag < 1.0:
        raise ParameterError("need 0 < decay <= 1 and 0 < diag < 1")
    shares = decay ** np.arange(num_classes - 1)
    shares /= shares.sum()
    counts = np.zeros((num_classes, num_classes))
    for i in range(num_classes):
        others = rng.permutation([c for c in range(num_classes) if c != i])
        counts[i, others] = shares * (1.0 - diag)
        counts[i, i] = diag
    return np.round(counts * total)


def uniform_transition(num_classes: int, r: float) -> np.ndarray:
    """Effective label channel of uniform ID noise at rate r."""
    T = np.full((num_classes, num_classes), r / (num_classes - 1))
    np.fill_diagonal(T, 1.0 - r)
    return T


def effective_transition(T, r: float) -> np.ndarray:
    """Label channel of non-uniform ID noise: keep w.p. 1-r, else draw from T."""
    T = np.asarray(getattr(T, "matrix", T), dtype=np.float64)
    return (1.0 - r) * np.eye(T.shape[0]) + r * T


def pairwise_transition(num_classes: int, flip_map: dict[int, int], r: float) -> np.ndarray:
    T = np.eye(num_classes)
    for src, dst in flip_map.items():
        T[src, src] = 1.0 - r
        T[src, dst] = r
    return T


def load_transition(path) -> TransitionMatrix:
    """Read ``{"rows": [[...]], "classes": [...]}``."""
    doc = json.loads(Path(path).read_text())
    if "rows" not in doc:
        raise ValidationError(f"{path}: missing 'rows'")
    rows = np.asarray(doc["rows"], dtype=np.float64)
    classes = list(doc.get("classes", range(rows.shape[1] if rows.ndim == 2 else 0)))
    if rows.ndim != 2 or len(classes) != rows.shape[1]:
        raise ValidationError(f"{path}: 'classes' must name every column")
    return TransitionMatrix(rows, classes)


def save_transition(T: TransitionMatrix, path) -> None:
    Path(path).write_text(json.dumps(T.to_json(), indent=1) + "\n")


def load_flip_map(path) -> dict[int, int]:
    """Read ``{"flip_map": {"src": dst, ...}}``; validated on load."""
    doc = json.loads(Path(path).read_text())
    if "flip_map" not in doc:
        raise ValidationError(f"{path}: missing 'flip_map'")
    fm = {int(k): int(v) for k, v in doc["flip_map"].items()}
    _check_flip_map(fm)
    return fm


def circular_flip_map(groups) -> dict[int, int]:
    """Map each class to the next one within its group, wrapping around."""
    fm = {}
    for g in groups:
        g = list(g)
        for a, b in zip(g, g[1:] + g[:1]):
            if a != b:
                fm[a] = b
    return fm


def _check_flip_map(flip_map, num_classes: int | None = None) -> None:
    for src, dst in flip_map.items():
        if src == dst:
            raise ValidationError(f"flip map sends class {src} to itself")
        if num_classes is not None and not (0 <= src < num_classes and 0 <= dst < num_classes):
            raise ValidationError(f"flip map entry {src}->{dst} outside [0, {num_classes})")


# ---------------------------------------------------------------------------
# injectors
# ---------------------------------------------------------------------------


def inject_uniform_id(ds: Dataset, r: float, rng: np.random.Generator) -> Dataset:
    """Flip to a uniformly chosen other class."""
    _check_rate(r)
    ds = _require_truth(ds)
    C = ds.num_classes
    picks = []
    for c, idx in _pick_per_class(ds, r, rng):
        # draw from C-1 values, shift past the true class
        dest = rng.integers(0, C - 1, size=idx.shape[0])
        picks.append((idx, dest + (dest >= c)))
    return _relabel(ds, picks)


def inject_nonuniform_id(ds: Dataset, T, r: float, rng: np.random.Generator) -> Dataset:
    """Flip with destination drawn from the true class's row of ``T``."""
    _check_rate(r)
    ds = _require_truth(ds)
    T = T if isinstance(T, TransitionMatrix) else TransitionMatrix(T)
    M = T.matrix
    if M.shape != (ds.num_classes, ds.num_classes):
        raise ValidationError(f"ID transition must be {ds.num_classes}x{ds.num_classes}, got {M.shape}")
    if np.any(np.diag(M) > 0):
        raise ValidationError("ID transition must have zero diagonal")
    picks = []
    for c, idx in _pick_per_class(ds, r, rng):
        picks.append((idx, rng.choice(ds.num_classes, size=idx.shape[0], p=M[c])))
    return _relabel(ds, picks)


def inject_pairwise(ds: Dataset, flip_map: dict[int, int], r: float, rng: np.random.Generator) -> Dataset:
    """Flip mapped classes to their fixed destination; r = 1 is allowed."""
    _check_rate(r, allow_one=True)
    _check_flip_map(flip_map, ds.num_classes)
    ds = _require_truth(ds)
    picks = [(idx, np.full(idx.shape[0], flip_map[c]))
             for c, idx in _pick_per_class(ds, r, rng, classes=sorted(flip_map))]
    return _relabel(ds, picks)


def _replace_content(ds: Dataset, pool: OodPool, r: float, rng, class_probs) -> Dataset:
    _check_rate(r)
    ds = _require_truth(ds)
    if pool.features.shape[0] == 0:
        raise ValidationError("OOD pool is empty")
    if pool.features.shape[1] != ds.dims:
        raise ValidationError("OOD pool feature width differs from dataset")
    members = pool.by_class
    features = ds.features.copy()
    clean = ds.clean.copy()
    source = np.full(len(ds), -1) if ds.ood_source is None else ds.ood_source.copy()
    for c, idx in _pick_per_class(ds, r, rng):
        for i in idx:
            probs = class_probs(c)
            while True:
                k = int(rng.choice(pool.num_classes, p=probs))
                if members[k].shape[0]:
                    break
                if probs[k] == 1.0:
                    raise ValidationError(f"OOD class {k} has no pool samples")
            j = members[k][rng.integers(members[k].shape[0])]
            features[i] = pool.features[j]
            source[i] = k
        clean[idx] = False
    return ds.replace(features=features, clean=clean, ood_source=source)


def inject_uniform_ood(ds: Dataset, pool: OodPool, r: float, rng: np.random.Generator) -> Dataset:
    """Replace content with a pool sample: OOD class uniform, then sample uniform."""
    uniform = np.full(pool.num_classes, 1.0 / pool.num_classes)
    return _replace_content(ds, pool, r, rng, lambda c: uniform)


def inject_nonuniform_ood(ds: Dataset, pool: OodPool, T_ood, r: float, rng: np.random.Generator) -> Dataset:
    """Replace content; the OOD class is drawn from the true class's row of ``T_ood``."""
    T_ood = T_ood if isinstance(T_ood, TransitionMatrix) else TransitionMatrix(T_ood)
    M = T_ood.matrix
    if M.shape != (ds.num_classes, pool.num_classes):
        raise ValidationError(f"OOD transition must be {ds.num_classes}x{pool.num_classes}, got {M.shape}")
    empty = [k for k, m in enumerate(pool.by_class) if m.shape[0] == 0 and M[:, k].any()]
    if empty:
        raise ValidationError(f"OOD classes {empty} are referenced but have no samples")
    return _replace_content(ds, pool, r, rng, lambda c: M[c])


def inject(ds: Dataset, noise: str, r: float, rng: np.random.Generator, *, transition=None,
           pool: OodPool | None = None, flip_map=None) -> Dataset:
    """Dispatch on a noise-type name from ``NOISE_TYPES``."""
    if noise == "uniform-id":
        return inject_uniform_id(ds, r, rng)
    if noise == "nonuniform-id":
        if transition is None:
            raise ValidationError("nonuniform-id noise needs a transition matrix")
        return inject_nonuniform_id(ds, transition, r, rng)
    if noise in ("uniform-ood", "nonuniform-ood"):
        if pool is None:
            raise ValidationError(f"{noise} noise needs an OOD pool")
        if noise == "uniform-ood":
            return inject_uniform_ood(ds, pool, r, rng)
        if transition is None:
            raise ValidationError("nonuniform-ood noise needs a transition matrix")
        return inject_nonuniform_ood(ds, pool, transition, r, rng)
    if noise == "pairwise":
        if flip_map is None:
            raise ValidationError("pairwise noise needs a flip map")
        return inject_pairwise(ds, flip_map, r, rng)
    raise ParameterError(f"unknown noise type {noise!r}; expected one of {NOISE_TYPES}")
