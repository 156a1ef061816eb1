"""Synthetic class clusters on the unit sphere, CSV persistence and
verification-pair sampling."""

import csv
import enum
from dataclasses import dataclass

import numpy as np


class Split(str, enum.Enum):
    TRAIN = "train"
    HOLDOUT = "holdout"


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 10
    input_dim: int = 16
    samples_per_class: int = 200
    noise_sigma: float = 0.15
    seed: int = 0
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.input_dim < 2:
            raise ValueError("input_dim must be >= 2")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in [0, 1)")


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: np.ndarray  # bool, True for holdout rows
    num_classes: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=bool)
        n = len(self.labels)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != n or self.split.shape != (n,):
            raise ValueError("inputs, labels and split must have matching lengths")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")
        train_counts = np.bincount(self.labels[~self.split], minlength=self.num_classes)
        if np.any(train_counts == 0):
            missing = int(np.flatnonzero(train_counts == 0)[0])
            raise ValueError(f"class {missing} has no training rows")

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    def train(self):
        return self.inputs[~self.split], self.labels[~self.split]

    def holdout(self):
        return self.inputs[self.split], self.labels[self.split]

    def summary(self):
        return {
            "rows": int(len(self.labels)),
            "classes": int(self.num_classes),
            "input_dim": int(self.input_dim),
            "train": int(np.sum(~self.split)),
            "holdout": int(np.sum(self.split)),
        }


def generate(spec):
    """Gaussian-perturbed copies of random unit class centers, renormalized.

    Per class, ``floor(holdout_fraction * samples_per_class)`` rows go to the
    holdout split (at least one row always stays in train).
    """
    rng = np.random.default_rng(spec.seed)
    centers = rng.standard_normal((spec.num_classes, spec.input_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)

    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    noise = rng.standard_normal((len(labels), spec.input_dim))
    x = centers[labels] + spec.noise_sigma * noise
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    # a zero row is astronomically unlikely but would poison everything downstream
    zero = norms[:, 0] == 0
    x[zero] = centers[labels[zero]]
    norms[zero] = 1.0
    x /= norms

    n_hold = min(int(spec.holdout_fraction * spec.samples_per_class), spec.samples_per_class - 1)
    split = np.zeros(len(labels), dtype=bool)
    for c in range(spec.num_classes):
        rows = np.flatnonzero(labels == c)
        split[rng.permutation(rows)[:n_hold]] = True
    return LabeledDataset(x, labels, split, spec.num_classes)


@dataclass
class VerificationPairs:
    index_a: np.ndarray
    index_b: np.ndarray
    same: np.ndarray

    def __len__(self):
        return len(self.same)

    def __iter__(self):
        return iter(zip(self.index_a.tolist(), self.index_b.tolist(), self.same.tolist()))


def make_pairs(dataset, pairs_per_polarity, seed):
    """Sample ``pairs_per_polarity`` same-class and different-class holdout pairs.

    Pairs are drawn without replacement from all candidate pairs of each
    polarity; if a polarity has fewer candidates than requested, both
    polarities are cut to the smaller count so the set stays balanced.
    Indices refer to rows of the full dataset.
    """
    if pairs_per_polarity < 1:
        raise ValueError("pairs_per_polarity must be >= 1")
    rows = np.flatnonzero(dataset.split)
    labels = dataset.labels[rows]
    if len(rows) < 2 or len(np.unique(labels)) < 2:
        raise ValueError("holdout split needs at least two rows from two classes")

    ia, ib = np.triu_indices(len(rows), k=1)
    same = labels[ia] == labels[ib]
    pos, neg = np.flatnonzero(same), np.flatnonzero(~same)
    k = min(pairs_per_polarity, len(pos), len(neg))
    if k == 0:
        raise ValueError("holdout split has no same-class pairs")

    rng = np.random.default_rng(seed)
    chosen = np.concatenate([rng.choice(pos, size=k, replace=False), rng.choice(neg, size=k, replace=False)])
    return VerificationPairs(rows[ia[chosen]], rows[ib[chosen]], same[chosen])


def _header(d):
    return [f"x{i}" for i in range(d)] + ["label", "split"]


def save_csv(dataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_header(dataset.input_dim))
        for x, y, h in zip(dataset.inputs, dataset.labels, dataset.split):
            w.writerow([repr(float(v)) for v in x] + [int(y), Split.HOLDOUT.value if h else Split.TRAIN.value])


def load_csv(path, num_classes=None):
    """Read a dataset written by :func:`save_csv`.

    ``num_classes`` defaults to ``max(label) + 1``. Malformed rows raise
    ``ValueError`` naming the 1-based line number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        d = len(header) - 2
        if d < 1 or header != _header(d):
            raise ValueError(f"{path}: line 1: unexpected header {header[:3]}...")
        xs, ys, hs = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 2:
                raise ValueError(f"{path}: line {lineno}: expected {d + 2} fields, got {len(row)}")
            try:
                xs.append([float(v) for v in row[:d]])
                ys.append(int(row[d]))
                hs.append(Split(row[d + 1]) is Split.HOLDOUT)
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    if not ys:
        raise ValueError(f"{path}: no data rows")
    labels = np.array(ys, dtype=np.int64)
    if labels.min() < 0:
        raise ValueError(f"{path}: negative label")
    n = int(labels.max()) + 1 if num_classes is None else num_classes
    return LabeledDataset(np.array(xs, dtype=np.float64).reshape(len(ys), d), labels, np.array(hs), n)
