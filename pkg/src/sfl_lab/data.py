"""Synthetic data, Dirichlet label partitioning and mini-batch sampling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import Batch
from .numkit import RngStream, derive_stream

IID = "iid"
MAX_PARTITION_ATTEMPTS = 100


class PartitionError(RuntimeError):
    pass


@dataclass(frozen=True)
class PartitionSpec:
    N: int = 10
    beta: float | str = 0.1
    classes: int = 10
    samples_per_class: int = 100
    dim: int = 20
    margin: float = 1.0
    blob_std: float = 1.0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not is_iid(self.beta) and not float(self.beta) > 0:
            raise ValueError("beta must be > 0 or 'iid'")
        if self.classes < 1 or self.samples_per_class < 1 or self.dim < 1:
            raise ValueError("classes, samples_per_class and dim must be >= 1")


def is_iid(beta) -> bool:
    return beta == IID or (isinstance(beta, float) and math.isinf(beta))


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    X: np.ndarray
    y: np.ndarray
    weight: float
    q: float = 1.0

    def __post_init__(self):
        if len(self.X) < 1:
            raise PartitionError(f"client {self.client_id} has an empty shard")
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"participation probability must lie in (0, 1], got {self.q}")

    @property
    def size(self) -> int:
        return len(self.X)

    def as_batch(self) -> Batch:
        return Batch(self.X, self.y)


def _class_means(classes: int, dim: int, margin: float) -> np.ndarray:
    # classes on signed coordinate axes, pushed outward once the axes run out
    means = np.zeros((classes, dim))
    for c in range(classes):
        axis = c % dim
        sign = 1.0 if (c // dim) % 2 == 0 else -1.0
        ring = 1 + c // (2 * dim)
        means[c, axis] = sign * margin * ring
    return means


def make_classification(spec: PartitionSpec, rng: RngStream):
    """Gaussian blobs, one mean per class. Returns ``(X, labels)``."""
    means = _class_means(spec.classes, spec.dim, spec.margin)
    labels = np.repeat(np.arange(spec.classes), spec.samples_per_class)
    X = means[labels] + rng.normal((len(labels), spec.dim), spec.blob_std)
    return X, labels


def make_regression_targets(X: np.ndarray, labels: np.ndarray, rng: RngStream,
                            noise: float = 0.1, label_shift: float = 1.0):
    """Linear targets with a per-class offset, so clients disagree on the optimum."""
    w_true = rng.normal(X.shape[1], 1.0)
    offsets = rng.normal(int(labels.max()) + 1, label_shift)
    y = X @ w_true + offsets[labels] + rng.normal(len(X), noise)
    return y, w_true


def make_binary_targets(labels: np.ndarray, classes: int) -> np.ndarray:
    """1 for the upper half of the classes, 0 for the lower half."""
    return (np.asarray(labels) >= classes // 2).astype(np.float64)


def dirichlet_partition(labels: np.ndarray, N: int, beta, rng: RngStream) -> list[np.ndarray]:
    """Split sample indices over ``N`` clients.

    For each class a proportion vector ``p ~ Dir(beta * 1_N)`` (via normalized
    Gamma draws) is sampled and that class's indices are dealt out
    multinomially by ``p``. ``beta='iid'`` shuffles and deals round-robin.
    Empty clients trigger a redraw on a fresh substream.
    """
    labels = np.asarray(labels)
    if N < 1:
        raise ValueError("N must be >= 1")
    if N == 1:
        return [np.arange(len(labels))]
    if is_iid(beta):
        perm = np.asarray(rng.permutation(range(len(labels))))
        parts = [np.sort(perm[k::N]) for k in range(N)]
        if min(len(p) for p in parts) == 0:
            raise PartitionError(f"cannot give {N} clients a sample each from {len(labels)} samples")
        return parts
    beta = float(beta)
    classes = np.unique(labels)
    for attempt in range(MAX_PARTITION_ATTEMPTS):
        sub = derive_stream(rng.seed, f"{rng.purpose}/dirichlet", rng.index * 1000 + attempt)
        buckets: list[list[int]] = [[] for _ in range(N)]
        for c in classes:
            idx = np.flatnonzero(labels == c)
            idx = np.asarray(sub.permutation(idx))
            g = sub.standard_gamma(beta, N)
            total = g.sum()
            if total <= 0.0:
                p = np.full(N, 1.0 / N)
            else:
                p = g / total
            counts = sub.multinomial(len(idx), p)
            start = 0
            for n, cnt in enumerate(counts):
                buckets[n].extend(idx[start:start + cnt].tolist())
                start += cnt
        if all(buckets):
            return [np.sort(np.asarray(b, dtype=np.int64)) for b in buckets]
    raise PartitionError(
        f"Dirichlet partition left a client empty after {MAX_PARTITION_ATTEMPTS} "
        f"attempts (beta={beta}, N={N})")


def balanced_dirichlet_partition(labels: np.ndarray, N: int, beta,
                                 rng: RngStream) -> list[np.ndarray]:
    """Equal-size shards with Dirichlet label skew.

    Client ``n`` draws class proportions ``p_n ~ Dir(beta * 1_C)`` and fills
    ``floor(D / N)`` slots one sample at a time, picking a class by ``p_n``
    among the classes that still have samples left. The ``D mod N``
    leftover samples are dropped so every client has weight ``1/N``.
    """
    labels = np.asarray(labels)
    if N < 1:
        raise ValueError("N must be >= 1")
    quota = len(labels) // N
    if quota < 1:
        raise PartitionError(f"cannot give {N} clients a sample each from {len(labels)} samples")
    if is_iid(beta):
        perm = np.asarray(rng.permutation(range(len(labels))))
        return [np.sort(perm[k * quota:(k + 1) * quota]) for k in range(N)]
    beta = float(beta)
    classes = np.unique(labels)
    pools = [list(rng.permutation(np.flatnonzero(labels == c))) for c in classes]
    parts = []
    for _ in range(N):
        g = rng.standard_gamma(beta, len(classes))
        p = g / g.sum() if g.sum() > 0 else np.full(len(classes), 1.0 / len(classes))
        picked = []
        for _ in range(quota):
            avail = np.array([len(pool) > 0 for pool in pools], dtype=np.float64)
            w = p * avail
            if w.sum() <= 0.0:
                w = avail
            c = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
            c = min(c, len(classes) - 1)
            while not pools[c]:
                c -= 1
            picked.append(pools[c].pop())
        parts.append(np.sort(np.asarray(picked, dtype=np.int64)))
    return parts


def build_shards(X: np.ndarray, y: np.ndarray, parts, q=None) -> list[ClientShard]:
    """Wrap index lists into shards with ``a_n = D_n / sum D``."""
    sizes = [len(p) for p in parts]
    total = sum(sizes)
    if q is None:
        q = [1.0] * len(parts)
    elif np.isscalar(q):
        q = [float(q)] * len(parts)
    if len(q) != len(parts):
        raise ValueError("one participation probability per client is required")
    return [ClientShard(n, X[p], y[p], sizes[n] / total, float(q[n]))
            for n, p in enumerate(parts)]


def sample_batch(shard: ClientShard, b_s: int, rng: RngStream) -> Batch:
    """Draw ``b_s`` samples uniformly with replacement."""
    if b_s < 1:
        raise ValueError("batch size must be >= 1")
    idx = rng.integers(shard.size, b_s)
    return Batch(shard.X[idx], shard.y[idx])


class EpochSampler:
    """Without-replacement sampling: reshuffle the shard every epoch."""

    def __init__(self, shard: ClientShard, b_s: int, rng: RngStream):
        if b_s < 1:
            raise ValueError("batch size must be >= 1")
        self.shard = shard
        self.b_s = min(b_s, shard.size)
        self.rng = rng
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next(self) -> Batch:
        if self._pos + self.b_s > len(self._order):
            self._order = self.rng.gen.permutation(self.shard.size)
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.b_s]
        self._pos += self.b_s
        return Batch(self.shard.X[idx], self.shard.y[idx])


def local_iterations(D_n: int, b_s: int, E: int) -> int:
    """``ceil(D_n / b_s) * E`` local steps for ``E`` epochs."""
    if min(D_n, b_s, E) < 1:
        raise ValueError("D_n, b_s and E must be positive")
    return -(-D_n // b_s) * E


def shared_tau(sizes, b_s: int, E: int) -> int:
    """Common iteration count: the maximum of the per-client counts."""
    return max(local_iterations(D, b_s, E) for D in sizes)


def save_csv(path, X: np.ndarray, y: np.ndarray) -> None:
    """One row per sample: label first, then features."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row, label in zip(X, y):
            w.writerow([repr(float(label))] + [repr(float(v)) for v in row])


def load_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = np.loadtxt(Path(path), delimiter=",", ndmin=2)
    return rows[:, 1:], rows[:, 0]
