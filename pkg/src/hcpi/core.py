"""Shared data model: datasets, fold plans, standardization and RNG streams."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Dataset",
    "FoldPlan",
    "RngStream",
    "derive_stream",
    "kfold_split",
    "standardize",
    "read_dataset",
    "write_dataset",
]

TARGET_COLUMN = "target"
META_KEYS = ("support", "beta", "sigma_noise", "blocks", "scenario", "seed")


@dataclass(frozen=True)
class Dataset:
    """Design matrix, outcome and optional ground truth.

    Parameters
    ----------
    X : ndarray of shape (n, p)
    y : ndarray of shape (n,)
        Regression target or ``{0, 1}`` class labels.
    names : tuple of str
        One unique label per column of ``X``.
    meta : dict
        Optional ground truth (``support``, ``beta``, ``sigma_noise``,
        ``blocks``, ``scenario``, ``seed``).
    """

    X: np.ndarray
    y: np.ndarray
    names: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {X.shape}")
        n, p = X.shape
        if n < 2 or p < 2:
            raise ValueError(f"need n >= 2 and p >= 2, got n={n}, p={p}")
        if y.shape[0] != n:
            raise ValueError(f"y has {y.shape[0]} entries but X has {n} rows")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite entries")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite entries")
        names = tuple(self.names) if len(self.names) else tuple(f"x{j}" for j in range(p))
        if len(names) != p:
            raise ValueError(f"expected {p} names, got {len(names)}")
        if len(set(names)) != p:
            raise ValueError("variable names must be unique")
        support = self.meta.get("support")
        if support is not None:
            support = [int(j) for j in support]
            if any(j < 0 or j >= p for j in support):
                raise ValueError(f"support indices must lie in [0, {p})")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def is_classification(self):
        """True when the outcome takes exactly two distinct values."""
        return np.unique(self.y).size == 2

    @property
    def support(self):
        s = self.meta.get("support")
        return None if s is None else np.asarray(s, dtype=int)


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of every sample to exactly one test fold."""

    K: int
    assignments: np.ndarray
    stratified: bool = False

    def test_indices(self, k):
        return np.flatnonzero(self.assignments == k)

    def train_indices(self, k):
        return np.flatnonzero(self.assignments != k)

    def splits(self):
        for k in range(self.K):
            yield self.train_indices(k), self.test_indices(k)


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream addressed by ``(seed, path)``.

    The generator is Philox keyed by a hash of the seed and the path, so
    the draws of a stream do not depend on which other streams were used
    before it.
    """

    seed: int
    path: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "path", tuple(int(v) for v in self.path))
        if self.seed < 0 or any(v < 0 for v in self.path):
            raise ValueError("seed and path labels must be non-negative integers")

    def generator(self):
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))

    def derive(self, label):
        return derive_stream(self, label)


def derive_stream(rng, label):
    """Return the child stream obtained by appending ``label`` to the path."""
    return RngStream(rng.seed, rng.path + (int(label),))


def kfold_split(n, K, stratify_on=None, rng=None):
    """Split ``n`` samples into ``K`` test folds.

    Samples are shuffled with ``rng`` and dealt round-robin, so fold sizes
    differ by at most one (within each class when ``stratify_on`` is given).

    Raises
    ------
    ValueError
        If ``K`` is outside ``[2, n]`` or a class has fewer than ``K`` members.
    """
    n = int(n)
    K = int(K)
    if K < 2 or K > n:
        raise ValueError(f"K must satisfy 2 <= K <= n, got K={K}, n={n}")
    gen = (rng if rng is not None else RngStream(0)).generator()
    assignments = np.empty(n, dtype=int)
    if stratify_on is None:
        order = gen.permutation(n)
        assignments[order] = np.arange(n) % K
        return FoldPlan(K, assignments, stratified=False)

    labels = np.asarray(stratify_on)
    if labels.shape[0] != n:
        raise ValueError("stratify_on must have length n")
    classes, counts = np.unique(labels, return_counts=True)
    if np.any(counts < K):
        small = classes[counts < K].tolist()
        raise ValueError(f"classes {small} have fewer than K={K} members")
    offset = 0
    for c in classes:
        idx = np.flatnonzero(labels == c)
        idx = idx[gen.permutation(idx.size)]
        # continue the round-robin across classes to keep total sizes balanced
        assignments[idx] = (offset + np.arange(idx.size)) % K
        offset += idx.size
    return FoldPlan(K, assignments, stratified=True)


def standardize(X, means=None, sds=None):
    """Center and scale columns to zero mean and unit sample sd.

    Constant columns are mapped to zeros and flagged rather than rejected.

    Returns
    -------
    Z : ndarray
    means : ndarray
    sds : ndarray
        Sample standard deviations, with 1.0 substituted for constant columns.
    constant : ndarray of bool
    """
    X = np.asarray(X, dtype=float)
    if means is None:
        means = X.mean(axis=0)
    if sds is None:
        sds = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.zeros(X.shape[1])
        scale = np.maximum(np.abs(means), 1.0)
        constant = sds <= 1e-12 * scale
        sds = np.where(constant, 1.0, sds)
    else:
        constant = np.zeros(X.shape[1], dtype=bool)
    Z = (X - means) / sds
    Z[:, constant] = 0.0
    return Z, means, sds, constant


# -- on-disk format ---------------------------------------------------------


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj):
    """Deterministic JSON used for every file this package writes."""
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def meta_path(csv_path):
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + ".meta.json")


def write_dataset(dataset, path, header=None):
    """Write ``dataset`` as CSV plus a ``<name>.meta.json`` sidecar.

    ``header`` is an optional comment line (starting with ``#``) written
    above the column names.
    """
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header is not None:
            if not header.startswith("#"):
                raise ValueError("header must start with '#'")
            fh.write(header + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(dataset.names) + [TARGET_COLUMN])
        for row, target in zip(dataset.X, dataset.y):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(target))])
    meta = {k: dataset.meta[k] for k in dataset.meta}
    with open(meta_path(path), "w", encoding="utf-8") as fh:
        fh.write(dumps_json(meta))
    return path


def read_dataset(path):
    """Read a CSV written by :func:`write_dataset` (sidecar optional)."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    if TARGET_COLUMN not in header:
        raise ValueError(f"{path}: no '{TARGET_COLUMN}' column")
    t = header.index(TARGET_COLUMN)
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    y = data[:, t]
    X = np.delete(data, t, axis=1)
    names = [h for i, h in enumerate(header) if i != t]
    meta = {}
    mp = meta_path(path)
    if os.path.exists(mp):
        with open(mp, encoding="utf-8") as fh:
            meta = json.load(fh)
    return Dataset(X, y, tuple(names), meta)
