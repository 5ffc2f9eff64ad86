"""Synthetic classification data, splits, and multi-node partitioning.

Datasets are Gaussian mixtures: one mean per class (orthonormal
directions when the dimension allows, random unit vectors otherwise)
plus isotropic noise, min-max normalized so features live in [0, 1]^d.
That keeps l-infinity budgets like 8/255 meaningful, mirroring image
conventions.

The on-disk format is bit-exact: magic 'DSET', u16 LE version, u32 N,
u32 d, u32 c, N*d little-endian float64 features, then N u32 labels.
A sidecar <path>.json manifest records the name, seed and generator
parameters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import stream

DATASET_MAGIC = b"DSET"
DATASET_VERSION = 1


class PartitionError(RuntimeError):
    pass


@dataclass
class Dataset:
    X: np.ndarray  # (N, d) float64 in [0, 1]
    y: np.ndarray  # (N,) int64 in [0, c)
    num_classes: int
    name: str = ""
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.ndim != 1 or len(self.X) != len(self.y):
            raise ValueError("X must be (N, d) with matching (N,) labels")
        if np.any(self.y < 0) or np.any(self.y >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if np.min(self.X) < 0.0 or np.max(self.X) > 1.0:
            raise ValueError("features must lie in [0, 1]")

    def require_all_classes(self):
        """Full datasets carry every class; non-IID shards may not."""
        if len(np.unique(self.y)) != self.num_classes:
            raise ValueError("every class must appear at least once")
        return self

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, indices, name_suffix: str = "") -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.X[idx].copy(), self.y[idx].copy(), self.num_classes,
                       name=self.name + name_suffix, seed=self.seed, meta=dict(self.meta))


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str  # centralized | full-replicated | iid-disjoint | dirichlet
    n: int = 1
    alpha: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in ("centralized", "full-replicated", "iid-disjoint", "dirichlet"):
            raise ValueError(f"unknown partition scheme {self.scheme!r}")
        if self.n < 1:
            raise ValueError("node count must be >= 1")
        if self.scheme == "dirichlet" and self.alpha <= 0:
            raise ValueError("dirichlet concentration must be > 0")


def generate(classes: int, dims: int, per_class: int, spread: float, seed: int,
             name: str = "gauss-mix", mean_dim: int | None = None) -> Dataset:
    """Gaussian-mixture classification data, deterministic in the seed.

    ``mean_dim`` restricts the class means to a subspace of that many
    leading coordinates (unit vectors within it); the remaining ambient
    dimensions carry pure noise, which leaves room for regularization-
    dependent decision boundaries the way natural-image manifolds do.
    With the default (full-dimensional means) the means are orthonormal
    whenever the dimension allows.
    """
    if classes < 2 or dims < 2:
        raise ValueError("need at least 2 classes and 2 dimensions")
    if per_class < 1:
        raise ValueError("per_class must be positive")
    if spread <= 0:
        raise ValueError("spread must be > 0")
    if mean_dim is not None and not 1 <= mean_dim <= dims:
        raise ValueError("mean_dim must lie in [1, dims]")

    if mean_dim is not None and mean_dim < dims:
        raw = stream("dataset-means", seed).normal(size=(classes, mean_dim))
        means = np.zeros((classes, dims))
        means[:, :mean_dim] = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    elif classes <= dims:
        raw = stream("dataset-means", seed).normal(size=(dims, classes))
        means = np.linalg.qr(raw)[0].T[:classes]  # orthonormal rows
    else:
        raw = stream("dataset-means", seed).normal(size=(classes, dims))
        means = raw / np.linalg.norm(raw, axis=1, keepdims=True)

    blocks, labels = [], []
    for k in range(classes):
        noise = stream("dataset-class", seed, k).normal(scale=spread, size=(per_class, dims))
        blocks.append(means[k] + noise)
        labels.append(np.full(per_class, k, dtype=np.int64))
    X = np.concatenate(blocks)
    y = np.concatenate(labels)

    lo, hi = X.min(axis=0), X.max(axis=0)
    span = hi - lo
    flat = span < 1e-12
    span[flat] = 1.0
    X = np.clip((X - lo) / span, 0.0, 1.0)
    X[:, flat] = 0.5

    order = stream("dataset-perm", seed).permutation(len(y))
    meta = {"classes": classes, "dims": dims, "per_class": per_class, "spread": spread,
            "mean_dim": mean_dim}
    return Dataset(X[order], y[order], classes, name=name, seed=seed, meta=meta).require_all_classes()


def split_validation(ds: Dataset, fraction: float):
    """Stratified (train, val) split; per-class counts within +/-1 of the
    exact fraction and both sides keep at least one sample per class."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    train_idx, val_idx = [], []
    for k in range(ds.num_classes):
        idx = np.flatnonzero(ds.y == k)
        if len(idx) < 2:
            raise ValueError(f"class {k} has fewer than 2 samples; cannot split")
        idx = idx[stream("val-split", ds.seed, k).permutation(len(idx))]
        n_val = int(round(fraction * len(idx)))
        n_val = max(1, min(len(idx) - 1, n_val))
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    train_idx = np.sort(np.concatenate(train_idx))
    val_idx = np.sort(np.concatenate(val_idx))
    return ds.subset(train_idx, "-train"), ds.subset(val_idx, "-val")


def partition(ds: Dataset, spec: PartitionSpec):
    """Split a dataset across nodes.

    full-replicated hands every node the full set; iid-disjoint cuts a
    uniform permutation into near-equal parts; dirichlet draws per-class
    node proportions from Dir(alpha * 1_N) (Gamma draws normalized to
    sum 1) and assigns each class's samples multinomially.
    """
    if spec.scheme == "centralized":
        if spec.n != 1:
            raise ValueError("centralized partition requires n == 1")
        return [ds]
    if spec.scheme == "full-replicated":
        return [ds] * spec.n

    if spec.scheme == "iid-disjoint":
        perm = stream("partition-iid", spec.seed).permutation(len(ds))
        parts = [np.sort(p) for p in np.array_split(perm, spec.n)]
    else:  # dirichlet
        parts = [[] for _ in range(spec.n)]
        for k in range(ds.num_classes):
            idx = np.flatnonzero(ds.y == k)
            rs = stream("partition-dirichlet", spec.seed, k)
            gams = rs.gamma(spec.alpha, 1.0, size=spec.n)
            props = gams / gams.sum()
            counts = rs.multinomial(len(idx), props)
            idx = idx[rs.permutation(len(idx))]
            offset = 0
            for node, cnt in enumerate(counts):
                parts[node].extend(idx[offset:offset + cnt])
                offset += cnt
        parts = [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]

    for node, p in enumerate(parts):
        if len(p) == 0:
            raise PartitionError(
                f"node {node} received zero samples; retry with a new partition seed")
    return [ds.subset(p, f"-node{node}") for node, p in enumerate(parts)]


def dirichlet_proportions(alpha: float, n: int, rs: np.random.Generator) -> np.ndarray:
    """One Dir(alpha * 1_n) draw via normalized Gamma(alpha, 1) variates."""
    g = rs.gamma(alpha, 1.0, size=n)
    return g / g.sum()


def save_dataset(path, ds: Dataset):
    path = str(path)
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<H", DATASET_VERSION))
        fh.write(struct.pack("<III", len(ds), ds.dim, ds.num_classes))
        fh.write(np.ascontiguousarray(ds.X, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.y, dtype="<u4").tobytes())
    manifest = {"name": ds.name, "seed": ds.seed, "generator": ds.meta}
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_dataset(path) -> Dataset:
    path = str(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DATASET_MAGIC:
            raise ValueError(f"not a dataset file: bad magic {magic!r}")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {version}")
        n, d, c = struct.unpack("<III", fh.read(12))
        X = np.frombuffer(fh.read(8 * n * d), dtype="<f8").reshape(n, d).astype(np.float64)
        y = np.frombuffer(fh.read(4 * n), dtype="<u4").astype(np.int64)
    name, seed, meta = "", 0, {}
    try:
        with open(path + ".json", "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        name = manifest.get("name", "")
        seed = int(manifest.get("seed", 0))
        meta = manifest.get("generator", {})
    except FileNotFoundError:
        pass
    return Dataset(X, y, int(c), name=name, seed=seed, meta=meta).require_all_classes()
