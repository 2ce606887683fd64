"""Datasets of class-labeled feature vectors, on-disk formats, and guards.

A dataset bundles a feature matrix, integer class labels, one embedding
vector per class, and four disjoint row-index splits:

* ``train_seen`` -- the labeled training rows,
* ``test_seen`` -- held-out rows of classes that appear in training,
* ``test_novel`` -- rows of classes with no labeled training data,
* ``unlabeled`` -- rows whose labels are never exposed; transductive
  training may use their features, inductive training may not touch them.

Features are min-max rescaled to [0, 1] per dimension, with the bounds
fitted on the ``train_seen`` rows only and the other splits clamped.  The
rescaling is idempotent bit for bit, so loading an already-rescaled file
changes nothing.

Label access goes through guarded views: reading ``test_novel`` labels or
the unlabeled pool's features bumps a counter and, inside a ``forbid``
context (which the training loop enters), raises.  The test suite uses this
to prove that no training code path peeks.

Binary matrix files carry an 8-byte magic, u32 row/column counts, and
little-endian float64 data in row-major order.  A JSON manifest ties the
feature/embedding/label files together with the splits and class sets.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AccessViolation, ConfigError, ContractError, DataFormatError
from .seeding import stream

MATRIX_MAGIC = b"ASGMAT01"

SPLIT_NAMES = ("train_seen", "test_seen", "test_novel", "unlabeled")


def write_matrix(path, arr):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"matrix files are 2-D, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_matrix(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MATRIX_MAGIC:
        raise DataFormatError(f"{path}: bad magic, not a matrix file")
    if len(blob) < 16:
        raise DataFormatError(f"{path}: truncated header")
    rows, cols = struct.unpack_from("<II", blob, 8)
    want = 16 + rows * cols * 8
    if len(blob) != want:
        raise DataFormatError(
            f"{path}: expected {want} bytes for {rows}x{cols}, got {len(blob)}"
        )
    arr = np.frombuffer(blob, dtype="<f8", offset=16).reshape(rows, cols).copy()
    if not np.all(np.isfinite(arr)):
        raise DataFormatError(f"{path}: non-finite values")
    return arr


def fit_rescale(reference):
    """Per-dimension (mins, span) of the reference rows for min-max scaling."""
    reference = np.asarray(reference, dtype=np.float64)
    if reference.shape[0] == 0:
        raise ContractError("rescaling needs at least one reference row")
    mins = reference.min(axis=0)
    span = reference.max(axis=0) - mins
    return mins, span


def apply_rescale(features, mins, span):
    """Map into [0, 1] with clamping; constant dimensions go to 0.5."""
    features = np.asarray(features, dtype=np.float64)
    constant = span == 0.0
    out = np.clip((features - mins) / np.where(constant, 1.0, span), 0.0, 1.0)
    out[:, constant] = 0.5
    return out


def rescale_01(features, reference_rows):
    """Per-dimension min-max rescale fitted on ``reference_rows``.

    Constant reference dimensions map to 0.5 everywhere; other rows are
    clamped into [0, 1].  Applying this twice is a bitwise no-op.
    """
    features = np.asarray(features, dtype=np.float64)
    reference_rows = np.asarray(reference_rows, dtype=np.int64)
    if reference_rows.size == 0:
        raise ContractError("rescale_01 needs at least one reference row")
    mins, span = fit_rescale(features[reference_rows])
    return apply_rescale(features, mins, span)


@dataclass(frozen=True)
class SplitSpec:
    """Row-index sets; pairwise disjoint, each within [0, n_rows)."""

    train_seen: np.ndarray
    test_seen: np.ndarray
    test_novel: np.ndarray
    unlabeled: np.ndarray

    def __post_init__(self):
        for name in SPLIT_NAMES:
            idx = np.asarray(getattr(self, name), dtype=np.int64)
            if idx.ndim != 1:
                raise ContractError(f"split {name} must be a flat index list")
            if idx.size != np.unique(idx).size:
                raise ContractError(f"split {name} contains duplicate rows")
            object.__setattr__(self, name, idx)

    def validate(self, n_rows):
        taken = np.zeros(n_rows, dtype=bool)
        for name in SPLIT_NAMES:
            idx = getattr(self, name)
            if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
                raise ContractError(f"split {name} indexes outside [0, {n_rows})")
            if np.any(taken[idx]):
                raise ContractError(f"split {name} overlaps another split")
            taken[idx] = True

    def asdict(self):
        return {name: getattr(self, name).tolist() for name in SPLIT_NAMES}


class AccessGuard:
    """Counts reads of sensitive views and blocks them inside forbid()."""

    def __init__(self):
        self.counters = {"test_novel_labels": 0, "unlabeled_features": 0}
        self._forbidden = set()

    def check(self, name):
        self.counters[name] = self.counters.get(name, 0) + 1
        if name in self._forbidden:
            raise AccessViolation(f"read of {name} inside a forbid({name}) context")

    @contextmanager
    def forbid(self, *names):
        added = [n for n in names if n not in self._forbidden]
        self._forbidden.update(added)
        try:
            yield self
        finally:
            self._forbidden.difference_update(added)


class Dataset:
    """Features, labels, class embeddings, and guarded split views."""

    def __init__(self, features, labels, class_embeddings, seen_classes,
                 novel_classes, splits, rescale=True):
        self.class_embeddings = np.asarray(class_embeddings, dtype=np.float64)
        if self.class_embeddings.ndim != 2:
            raise ContractError("class embeddings must be a (classes, d_c) matrix")
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise ContractError("features must be a (rows, d_x) matrix")
        labels = np.asarray(labels)
        if labels.shape != (features.shape[0],):
            raise ContractError(
                f"labels shape {labels.shape} does not match {features.shape[0]} rows"
            )
        if not np.all(labels == labels.astype(np.int64)):
            raise ContractError("labels must be integers")
        self._labels = labels.astype(np.int64)
        n_classes = self.class_embeddings.shape[0]
        if self._labels.size and (
            self._labels.min() < 0 or self._labels.max() >= n_classes
        ):
            raise ContractError(f"labels must lie in [0, {n_classes})")

        self.seen_classes = np.unique(np.asarray(seen_classes, dtype=np.int64))
        self.novel_classes = np.unique(np.asarray(novel_classes, dtype=np.int64))
        if np.intersect1d(self.seen_classes, self.novel_classes).size:
            raise ContractError("seen and novel class sets overlap")
        for name, cls in (("seen", self.seen_classes), ("novel", self.novel_classes)):
            if cls.size and (cls.min() < 0 or cls.max() >= n_classes):
                raise ContractError(f"{name} class ids outside [0, {n_classes})")

        if not isinstance(splits, SplitSpec):
            splits = SplitSpec(**splits)
        splits.validate(features.shape[0])
        self.splits = splits

        if np.setdiff1d(self._labels[splits.test_novel], self.novel_classes).size:
            raise ContractError("test_novel rows carry non-novel labels")

        self.features = rescale_01(features, splits.train_seen) if rescale else features
        self.guard = AccessGuard()

    # -- basic shape info ---------------------------------------------------

    @property
    def d_x(self):
        return self.features.shape[1]

    @property
    def d_c(self):
        return self.class_embeddings.shape[1]

    @property
    def num_classes(self):
        return self.class_embeddings.shape[0]

    # -- split views ----------------------------------------------------

    def rows(self, split):
        if split not in SPLIT_NAMES:
            raise ContractError(f"unknown split {split!r}")
        return getattr(self.splits, split).copy()

    def features_for(self, split):
        if split == "unlabeled":
            self.guard.check("unlabeled_features")
        return self.features[self.rows(split)]

    def labels_for(self, split):
        if split == "unlabeled":
            raise ContractError("the unlabeled pool exposes no label view")
        if split == "test_novel":
            self.guard.check("test_novel_labels")
        return self._labels[self.rows(split)]

    def embeddings_for(self, class_ids):
        class_ids = np.asarray(class_ids, dtype=np.int64)
        if class_ids.size and (
            class_ids.min() < 0 or class_ids.max() >= self.num_classes
        ):
            raise ContractError("class ids outside the embedding table")
        return self.class_embeddings[class_ids]

    def with_splits(self, splits):
        """Same arrays under different splits; skips re-rescaling."""
        ds = Dataset(
            self.features, self._labels, self.class_embeddings,
            self.seen_classes, self.novel_classes, splits, rescale=False,
        )
        for extra in ("true_class_means",):
            if hasattr(self, extra):
                setattr(ds, extra, getattr(self, extra))
        return ds


# ---------------------------------------------------------------------------
# synthetic datasets


@dataclass
class SyntheticSpec:
    """Recipe for a class-conditional Gaussian feature dataset.

    Class embeddings are uniform on [0, 1]^d_c; each class mean is
    sigmoid(A @ embedding) for a fixed mixing matrix A, so nearby
    embeddings give nearby feature distributions and a generator can
    extrapolate to classes it never saw.
    """

    n_seen: int = 20
    n_novel: int = 5
    d_x: int = 32
    d_c: int = 16
    samples_per_class: int = 100
    noise: float = 0.1
    seed: int = 0
    mixing: np.ndarray | None = None
    train_fraction: float = 0.8
    test_novel_fraction: float = 0.5

    def __post_init__(self):
        for name in ("n_seen", "n_novel", "d_x", "d_c"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.samples_per_class < 2:
            raise ContractError("samples_per_class must be >= 2")
        if self.noise < 0:
            raise ContractError("noise must be non-negative")
        if not (0 < self.train_fraction < 1) or not (0 < self.test_novel_fraction <= 1):
            raise ContractError("split fractions must lie in (0, 1)")

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown synthetic-spec keys: {unknown}")
        return cls(**raw)

    def asdict(self):
        out = {
            "n_seen": self.n_seen, "n_novel": self.n_novel,
            "d_x": self.d_x, "d_c": self.d_c,
            "samples_per_class": self.samples_per_class,
            "noise": self.noise, "seed": self.seed,
            "train_fraction": self.train_fraction,
            "test_novel_fraction": self.test_novel_fraction,
        }
        if self.mixing is not None:
            out["mixing"] = np.asarray(self.mixing).tolist()
        return out


def make_synthetic(spec):
    """Sample a dataset per ``spec``; identical spec gives identical bytes.

    Seen-class rows split into train/test by ``train_fraction``; novel-class
    rows split into test_novel/unlabeled by ``test_novel_fraction``.
    """
    rng = stream(spec.seed, "data")
    n_classes = spec.n_seen + spec.n_novel
    embeddings = rng.uniform(size=(n_classes, spec.d_c))
    if spec.mixing is not None:
        mixing = np.asarray(spec.mixing, dtype=np.float64)
        if mixing.shape != (spec.d_x, spec.d_c):
            raise ContractError(
                f"mixing matrix must be ({spec.d_x}, {spec.d_c}), got {mixing.shape}"
            )
    else:
        mixing = rng.normal(0.0, 2.0 / np.sqrt(spec.d_c), size=(spec.d_x, spec.d_c))
    logits = embeddings @ mixing.T
    means = 1.0 / (1.0 + np.exp(-logits))  # strictly inside (0, 1)

    per = spec.samples_per_class
    features = np.repeat(means, per, axis=0)
    features = features + rng.normal(0.0, spec.noise, size=features.shape)
    features = np.clip(features, 0.0, 1.0)
    labels = np.repeat(np.arange(n_classes), per)

    train_rows, test_seen_rows, test_novel_rows, unlabeled_rows = [], [], [], []
    n_train = max(1, int(round(spec.train_fraction * per)))
    n_test_novel = max(1, int(round(spec.test_novel_fraction * per)))
    for cls in range(n_classes):
        rows = np.arange(cls * per, (cls + 1) * per)
        if cls < spec.n_seen:
            train_rows.append(rows[:n_train])
            test_seen_rows.append(rows[n_train:])
        else:
            test_novel_rows.append(rows[:n_test_novel])
            unlabeled_rows.append(rows[n_test_novel:])

    splits = SplitSpec(
        train_seen=np.concatenate(train_rows),
        test_seen=np.concatenate(test_seen_rows),
        test_novel=np.concatenate(test_novel_rows),
        unlabeled=(
            np.concatenate(unlabeled_rows)
            if any(r.size for r in unlabeled_rows)
            else np.empty(0, dtype=np.int64)
        ),
    )
    ds = Dataset(
        features, labels, embeddings,
        seen_classes=np.arange(spec.n_seen),
        novel_classes=np.arange(spec.n_seen, n_classes),
        splits=splits,
    )
    # ground-truth means, mapped through the same rescaling, for oracle tests
    ref = features[splits.train_seen]
    mins = ref.min(axis=0)
    span = ref.max(axis=0) - mins
    constant = span == 0.0
    scaled_means = np.clip((means - mins) / np.where(constant, 1.0, span), 0.0, 1.0)
    scaled_means[:, constant] = 0.5
    ds.true_class_means = scaled_means
    return ds


# ---------------------------------------------------------------------------
# manifest + blob persistence


def save_dataset(dataset, out_dir):
    """Write blobs plus manifest.json into ``out_dir``; returns manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_matrix(out_dir / "features.mat", dataset.features)
    write_matrix(out_dir / "embeddings.mat", dataset.class_embeddings)
    write_matrix(out_dir / "labels.mat", dataset._labels.reshape(-1, 1).astype(float))
    manifest = {
        "format": "anyshot-dataset-v1",
        "feature_file": "features.mat",
        "embedding_file": "embeddings.mat",
        "label_file": "labels.mat",
        "dims": {
            "rows": int(dataset.features.shape[0]),
            "d_x": int(dataset.d_x),
            "d_c": int(dataset.d_c),
            "num_classes": int(dataset.num_classes),
        },
        "seen_classes": dataset.seen_classes.tolist(),
        "novel_classes": dataset.novel_classes.tolist(),
        "splits": dataset.splits.asdict(),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_dataset(manifest_path):
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{manifest_path}: invalid JSON: {exc}") from exc
    for key in ("feature_file", "embedding_file", "label_file", "dims", "splits",
                "seen_classes", "novel_classes"):
        if key not in manifest:
            raise DataFormatError(f"{manifest_path}: manifest missing {key!r}")
    base = manifest_path.parent
    features = read_matrix(base / manifest["feature_file"])
    embeddings = read_matrix(base / manifest["embedding_file"])
    labels_mat = read_matrix(base / manifest["label_file"])
    if labels_mat.shape[1] != 1:
        raise DataFormatError("label file must be a single-column matrix")
    labels = labels_mat[:, 0]
    if not np.all(labels == labels.astype(np.int64)):
        raise DataFormatError("labels must be integer-valued")

    dims = manifest["dims"]
    checks = (
        (features.shape[0], dims["rows"], "feature rows"),
        (features.shape[1], dims["d_x"], "feature columns"),
        (embeddings.shape[0], dims["num_classes"], "embedding rows"),
        (embeddings.shape[1], dims["d_c"], "embedding columns"),
        (labels.shape[0], dims["rows"], "label rows"),
    )
    for got, want, what in checks:
        if got != want:
            raise DataFormatError(f"{manifest_path}: {what} = {got}, manifest says {want}")

    try:
        return Dataset(
            features, labels, embeddings,
            manifest["seen_classes"], manifest["novel_classes"],
            SplitSpec(**{k: np.asarray(v, dtype=np.int64)
                         for k, v in manifest["splits"].items()}),
        )
    except ContractError as exc:
        raise DataFormatError(f"{manifest_path}: {exc}") from exc


def nshot_subsample(dataset, shots, seed):
    """Promote exactly ``shots`` rows of every novel class into the labeled set.

    Promoted rows are drawn (seeded) from that class's test_novel and
    unlabeled rows and removed from their source splits.  This is data
    preparation for the few-shot protocols, so it reads novel labels through
    the raw array, not the guarded view.
    """
    if shots < 1:
        raise ContractError("shots must be >= 1")
    rng = np.random.default_rng(seed)
    labels = dataset._labels
    take = []
    for cls in dataset.novel_classes:
        pool = np.concatenate([
            dataset.splits.test_novel[labels[dataset.splits.test_novel] == cls],
            dataset.splits.unlabeled[labels[dataset.splits.unlabeled] == cls],
        ])
        if pool.size < shots:
            raise ContractError(
                f"class {int(cls)} has only {pool.size} candidate rows, need {shots}"
            )
        take.append(rng.choice(pool, size=shots, replace=False))
    promoted = np.sort(np.concatenate(take))
    splits = SplitSpec(
        train_seen=np.concatenate([dataset.splits.train_seen, promoted]),
        test_seen=dataset.splits.test_seen,
        test_novel=np.setdiff1d(dataset.splits.test_novel, promoted),
        unlabeled=np.setdiff1d(dataset.splits.unlabeled, promoted),
    )
    return dataset.with_splits(splits)
