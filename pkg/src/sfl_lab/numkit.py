"""Deterministic numerical substrate.

Vectors are plain 1-D ``float64`` numpy arrays. The helpers here add the two
guarantees the simulator relies on: every value entering or leaving an
update is finite, and reductions run in a fixed order so repeated runs are
bit-identical.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """A NaN or infinity appeared in a vector or scalar."""


class ShapeError(ValueError):
    """Operands have incompatible lengths."""


def check_finite(x: np.ndarray, what: str = "vector") -> np.ndarray:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{what} contains non-finite entries")
    return x


def as_vec(values) -> np.ndarray:
    """Copy ``values`` into a read-only, finite 1-D float64 array."""
    arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    check_finite(arr)
    arr.flags.writeable = False
    return arr


def zeros(n: int) -> np.ndarray:
    return as_vec(np.zeros(n))


def _same_len(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise ShapeError(f"length mismatch: {x.shape} vs {y.shape}")


def axpy(alpha: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Return ``alpha * x + y`` as a new read-only vector."""
    _same_len(x, y)
    with np.errstate(over="ignore", invalid="ignore"):
        out = alpha * x + y
    check_finite(out, "axpy result")
    out.flags.writeable = False
    return out


def fixed_sum(values: np.ndarray) -> float:
    """Left-to-right sum in ascending index order.

    numpy's ``sum`` is pairwise; this is the naive order the reproducibility
    contract pins down.
    """
    acc = 0.0
    for v in np.asarray(values, dtype=np.float64).tolist():
        acc += v
    return acc


def sq_dist(x: np.ndarray, y: np.ndarray, split: int | None = None) -> float:
    """Squared Euclidean distance with a fixed summation order.

    With ``split`` the two blocks ``[:split]`` and ``[split:]`` are summed
    separately and then added, which makes
    ``sq_dist(concat(a, b), concat(c, d), split=len(a))`` equal to
    ``sq_dist(a, c) + sq_dist(b, d)`` bit for bit.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same_len(x, y)
    diff = x - y
    sq = diff * diff
    if split is None:
        return fixed_sum(sq)
    return fixed_sum(sq[:split]) + fixed_sum(sq[split:])


def sq_norm(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return fixed_sum(x * x)


def weighted_sum(vectors: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """``sum_k w_k v_k`` accumulated in ascending k."""
    if len(vectors) != len(weights):
        raise ShapeError("vectors and weights differ in count")
    if not vectors:
        raise ShapeError("empty weighted sum")
    acc = weights[0] * vectors[0]
    for w, v in zip(weights[1:], vectors[1:]):
        _same_len(acc, v)
        acc = acc + w * v
    check_finite(acc, "weighted sum")
    acc.flags.writeable = False
    return acc


# --------------------------------------------------------------------------
# Seeded streams
# --------------------------------------------------------------------------

def _label_code(purpose: str) -> int:
    digest = hashlib.sha256(purpose.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class RngStream:
    """A single-owner random stream identified by ``(seed, stream_id)``.

    Backed by numpy's PCG64 bit generator, which has a published reference
    output and is bit-stable across platforms. Independence between streams
    comes from ``SeedSequence`` spawn keys.
    """

    def __init__(self, seed: int, purpose: str, index: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.purpose = purpose
        self.index = int(index)
        key = (_label_code(purpose), self.index)
        self._seq = np.random.SeedSequence(entropy=self.seed, spawn_key=key)
        self.stream_id = int(self._seq.generate_state(1, dtype=np.uint64)[0])
        self.gen = np.random.Generator(np.random.PCG64(self._seq))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, purpose={self.purpose!r}, index={self.index})"

    def next_u64(self) -> int:
        return int(self.gen.integers(0, 2**64, dtype=np.uint64))

    def integers(self, high: int, size: int) -> np.ndarray:
        return self.gen.integers(0, high, size=size)

    def random(self, size: int | None = None):
        return self.gen.random(size)

    def permutation(self, items) -> list:
        items = list(items)
        return [items[k] for k in self.gen.permutation(len(items))]

    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        return self.gen.normal(0.0, scale, size=size)

    def standard_gamma(self, shape: float, size: int) -> np.ndarray:
        return self.gen.standard_gamma(shape, size=size)

    def multinomial(self, n: int, pvals: np.ndarray) -> np.ndarray:
        return self.gen.multinomial(n, pvals)


def derive_stream(root_seed: int, purpose: str, index: int = 0) -> RngStream:
    return RngStream(root_seed, purpose, index)
