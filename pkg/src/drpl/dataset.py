"""Labeled datasets, the synthetic blob generator and the on-disk format.

On disk a dataset is a directory with::

    meta.json     {"n": N, "d": D, "c": C, "dtype": "f32"}
    features.bin  row-major little-endian float32, N*D values
    labels.bin    little-endian uint32 observed labels, N values
    truth.json    optional ground-truth manifest (true labels, clean mask)

The training payload never contains ground truth; ``truth.json`` is kept
separate so that only evaluation code reads it.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, ParameterError, ValidationError
from .rng import stream


@dataclass
class Dataset:
    features: np.ndarray
    observed: np.ndarray
    num_classes: int
    true: np.ndarray | None = None
    clean: np.ndarray | None = None
    ids: np.ndarray | None = None
    # OOD class that replaced a sample's content, -1 where untouched
    ood_source: np.ndarray | None = None
    # global identity of each label index, used to check task disjointness
    class_ids: tuple | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.observed = np.asarray(self.observed, dtype=np.int64)
        n = self.features.shape[0]
        if self.features.ndim != 2 or self.observed.shape != (n,):
            raise ValidationError("features must be (N, D) and labels (N,)")
        if self.ids is None:
            self.ids = np.arange(n)
        if n and (self.observed.min() < 0 or self.observed.max() >= self.num_classes):
            raise ValidationError(f"observed labels must lie in [0, {self.num_classes})")
        if self.true is not None:
            self.true = np.asarray(self.true, dtype=np.int64)
            if self.true.shape != (n,):
                raise ValidationError("true labels length mismatch")
            if n and (self.true.min() < 0 or self.true.max() >= self.num_classes):
                raise ValidationError(f"true labels must lie in [0, {self.num_classes})")
            if self.clean is None:
                self.clean = self.observed == self.true
        if self.clean is not None:
            self.clean = np.asarray(self.clean, dtype=bool)
            if self.clean.shape != (n,):
                raise ValidationError("clean mask length mismatch")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dims(self) -> int:
        return self.features.shape[1]

    @property
    def has_truth(self) -> bool:
        return self.true is not None and self.clean is not None

    def replace(self, **changes) -> "Dataset":
        return dataclasses.replace(self, **changes)

    def class_indices(self, labels=None) -> list[np.ndarray]:
        """Sample indices per class, by true label when known."""
        if labels is None:
            labels = self.true if self.true is not None else self.observed
        return [np.flatnonzero(labels == c) for c in range(self.num_classes)]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return Dataset(
            self.features[idx], self.observed[idx], self.num_classes,
            pick(self.true), pick(self.clean), pick(self.ids), pick(self.ood_source), self.class_ids,
        )

    def without_truth(self) -> "Dataset":
        return Dataset(self.features, self.observed, self.num_classes, ids=self.ids, class_ids=self.class_ids)


@dataclass
class SyntheticTask:
    train: Dataset
    test: Dataset
    pool: "OodPool | None"
    means: np.ndarray
    # disjoint held-out classes for linear probes: (train, test) or None
    probe: tuple[Dataset, Dataset] | None = None


def _class_means(total: int, dims: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    if dims >= total:
        # scaled orthonormal basis is exactly `separation` apart pairwise
        basis = np.linalg.qr(rng.standard_normal((dims, dims)))[0][:, :total].T
        return basis * separation / np.sqrt(2.0)
    side = 2.0 * separation * np.ceil(total ** (1.0 / dims))
    while True:
        means = []
        for _ in range(1000 * total):
            cand = rng.uniform(-side / 2, side / 2, size=dims)
            if all(np.linalg.norm(cand - m) >= separation for m in means):
                means.append(cand)
                if len(means) == total:
                    return np.array(means)
        side *= 1.5


def _blobs(means, labels, rng):
    return means[labels] + rng.standard_normal((labels.shape[0], means.shape[1]))


def generate_synthetic(
    classes: int,
    per_class: int,
    dims: int,
    separation: float,
    seed: int,
    *,
    test_per_class: int | None = None,
    ood_classes: int = 0,
    ood_per_class: int = 100,
    probe_classes: int = 0,
    probe_per_class: int = 100,
) -> SyntheticTask:
    """Isotropic unit-variance Gaussian blobs.

    All class means (task, OOD and probe classes) are at pairwise distance
    at least ``separation``. Samples are ordered class by class, which keeps
    outputs byte-identical for a fixed seed.
    """
    from .noise import OodPool

    if classes < 2 or per_class < 1 or dims < 1 or separation <= 0:
        raise ParameterError("need classes >= 2, per_class >= 1, dims >= 1, separation > 0")
    test_per_class = per_class // 2 if test_per_class is None else test_per_class
    total = classes + ood_classes + probe_classes
    rng = stream(seed, "data")
    means = _class_means(total, dims, separation, rng)
    cls_ids = tuple(range(classes))

    def make(idx_classes, count, which):
        labels = np.repeat(np.arange(len(idx_classes)), count)
        x = _blobs(means[list(idx_classes)], labels, stream(seed, "data", which))
        return x.astype(np.float32).astype(np.float64), labels

    x, y = make(range(classes), per_class, 1)
    train = Dataset(x, y, classes, true=y.copy(), class_ids=cls_ids)
    x, y = make(range(classes), max(test_per_class, 1), 2)
    test = Dataset(x, y, classes, true=y.copy(), class_ids=cls_ids)

    pool = None
    if ood_classes:
        ood = range(classes, classes + ood_classes)
        x, y = make(ood, ood_per_class, 3)
        pool = OodPool(x, y, ood_classes)

    probe = None
    if probe_classes:
        pc = range(classes + ood_classes, total)
        ids = tuple(pc)
        x, y = make(pc, probe_per_class, 4)
        ptrain = Dataset(x, y, probe_classes, true=y.copy(), class_ids=ids)
        x, y = make(pc, probe_per_class, 5)
        ptest = Dataset(x, y, probe_classes, true=y.copy(), class_ids=ids)
        probe = (ptrain, ptest)
    return SyntheticTask(train, test, pool, means, probe)


# ---------------------------------------------------------------------------
# on-disk format
# ---------------------------------------------------------------------------


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def save_dataset(ds: Dataset, path, *, with_truth: bool = True) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {"n": len(ds), "d": ds.dims, "c": ds.num_classes, "dtype": "f32"}
    _atomic_write(path / "meta.json", dumps_json(meta).encode())
    _atomic_write(path / "features.bin", np.ascontiguousarray(ds.features, dtype="<f4").tobytes())
    _atomic_write(path / "labels.bin", np.ascontiguousarray(ds.observed, dtype="<u4").tobytes())
    truth = path / "truth.json"
    if with_truth and ds.has_truth:
        manifest = {"true_labels": ds.true.tolist(), "clean": ds.clean.astype(int).tolist()}
        if ds.ood_source is not None:
            manifest["ood_source"] = ds.ood_source.tolist()
        _atomic_write(truth, dumps_json(manifest).encode())
    elif truth.exists():
        truth.unlink()
    return path


def load_dataset(path, *, with_truth: bool = False) -> Dataset:
    """Read a dataset directory. Ground truth is attached only on request."""
    path = Path(path)
    for name in ("meta.json", "features.bin", "labels.bin"):
        if not (path / name).is_file():
            raise DatasetFormatError(f"missing {name} in {path}")
    meta = json.loads((path / "meta.json").read_text())
    try:
        n, d, c = int(meta["n"]), int(meta["d"]), int(meta["c"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"bad meta.json: {exc}") from exc
    if meta.get("dtype", "f32") != "f32":
        raise DatasetFormatError(f"unsupported dtype {meta['dtype']!r}")
    fbytes = (path / "features.bin").read_bytes()
    lbytes = (path / "labels.bin").read_bytes()
    if len(fbytes) != 4 * n * d:
        raise DatasetFormatError(f"features.bin length mismatch: {len(fbytes)} bytes, expected {4 * n * d}")
    if len(lbytes) != 4 * n:
        raise DatasetFormatError(f"labels.bin length mismatch: {len(lbytes)} bytes, expected {4 * n}")
    x = np.frombuffer(fbytes, dtype="<f4").reshape(n, d).astype(np.float64)
    y = np.frombuffer(lbytes, dtype="<u4").astype(np.int64)
    if n and y.max() >= c:
        raise ValidationError(f"label {y.max()} >= declared class count {c}")
    ds = Dataset(x, y, c)
    if with_truth:
        ds = attach_truth(ds, path / "truth.json")
    return ds


def attach_truth(ds: Dataset, manifest_path) -> Dataset:
    manifest = json.loads(Path(manifest_path).read_text())
    true = np.asarray(manifest["true_labels"], dtype=np.int64)
    clean = np.asarray(manifest["clean"], dtype=bool)
    if true.shape != (len(ds),) or clean.shape != (len(ds),):
        raise DatasetFormatError("truth manifest length does not match dataset")
    src = manifest.get("ood_source")
    return ds.replace(true=true, clean=clean, ood_source=None if src is None else np.asarray(src))
