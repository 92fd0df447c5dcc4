"""Geometric primitives shared by every other module.

Point clouds, matchings, cost matrices and seeded randomness. All types are
immutable after construction (their numpy buffers are marked read-only) and
every operation is a pure function, so values can be shared freely across
threads and worker processes.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "Norm",
    "PointCloud",
    "CloudPair",
    "Matching",
    "SoftMatching",
    "CostMatrix",
    "GradientField",
    "pairwise_cost",
    "apply_permutation",
    "substream",
]

# Per-point gradient rows, one row per target point, shape (N, D).
GradientField = np.ndarray


class Norm(Enum):
    """Ground cost between individual points."""

    L2 = "l2"
    L2_SQUARED = "l2_squared"


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PointCloud:
    """An unordered set of N points in R^D (D in {2, 3}).

    Coordinates are stored as float64 and must be finite. The row order is
    arbitrary; all downstream distances are order-independent.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = _frozen_array(self.points, np.float64)
        if pts.ndim != 2:
            raise ValueError(f"points must be a 2-d array, got shape {pts.shape}")
        n, d = pts.shape
        if n < 1:
            raise ValueError("a point cloud needs at least one point")
        if d not in (2, 3):
            raise ValueError(f"spatial dimension must be 2 or 3, got {d}")
        if not np.isfinite(pts).all():
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class CloudPair:
    """A (source, target) pair of same-size, same-dimension clouds.

    ``tag`` records which augmentation scheme produced the pair (see the
    datagen module for the enumeration; plain string here to keep core free
    of dataset concerns).
    """

    source: PointCloud
    target: PointCloud
    tag: str = "original"

    def __post_init__(self):
        if self.source.n != self.target.n:
            raise ValueError(
                f"source and target must have the same size "
                f"({self.source.n} != {self.target.n})"
            )
        if self.source.d != self.target.d:
            raise ValueError(
                f"source and target must have the same dimension "
                f"({self.source.d} != {self.target.d})"
            )


@dataclass(frozen=True)
class Matching:
    """A bijection between two same-size clouds, as a permutation array.

    ``assign[i] = j`` matches source point i to target point j.
    """

    assign: np.ndarray

    def __post_init__(self):
        a = _frozen_array(self.assign, np.int64)
        if a.ndim != 1:
            raise ValueError("assign must be one-dimensional")
        n = a.shape[0]
        seen = np.zeros(n, dtype=bool)
        if n == 0 or a.min() < 0 or a.max() >= n:
            raise ValueError("assign entries must lie in 0..N-1")
        seen[a] = True
        if not seen.all():
            raise ValueError("assign must be a permutation (no duplicates)")
        object.__setattr__(self, "assign", a)

    def __len__(self) -> int:
        return self.assign.shape[0]

    def inverse(self) -> "Matching":
        inv = np.empty_like(self.assign)
        inv[self.assign] = np.arange(len(self))
        return Matching(inv)


@dataclass(frozen=True)
class SoftMatching:
    """Directed argmax maps (forward: source->target, backward: target->source).

    Unlike :class:`Matching` the two maps need not be bijections; they come
    from row-wise argmaxes of attention blocks or transport plans.
    """

    forward: np.ndarray
    backward: np.ndarray

    def __post_init__(self):
        fwd = _frozen_array(self.forward, np.int64)
        bwd = _frozen_array(self.backward, np.int64)
        for name, arr in (("forward", fwd), ("backward", bwd)):
            if arr.ndim != 1:
                raise ValueError(f"{name} must be one-dimensional")
            n = arr.shape[0]
            if n == 0 or arr.min() < 0 or arr.max() >= n:
                raise ValueError(f"{name} entries must lie in 0..N-1")
        if fwd.shape != bwd.shape:
            raise ValueError("forward and backward must have equal length")
        object.__setattr__(self, "forward", fwd)
        object.__setattr__(self, "backward", bwd)

    def __len__(self) -> int:
        return self.forward.shape[0]

    def is_bijective(self) -> bool:
        n = len(self)
        return (
            np.unique(self.forward).size == n and np.unique(self.backward).size == n
        )


@dataclass(frozen=True)
class CostMatrix:
    """Square matrix of pairwise transport costs, c[i, j] = cost(u_i -> v_j)."""

    c: np.ndarray

    def __post_init__(self):
        c = _frozen_array(self.c, np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"cost matrix must be square, got shape {c.shape}")
        if not np.isfinite(c).all():
            raise ValueError("cost entries must be finite")
        if (c < 0).any():
            raise ValueError("cost entries must be nonnegative")
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return self.c.shape[0]


def pairwise_cost(u: PointCloud, v: PointCloud, norm: Norm = Norm.L2) -> CostMatrix:
    """All-pairs transport costs between two equal-size clouds.

    c[i, j] is the euclidean distance from u_i to v_j (or its square). The
    differences are formed explicitly rather than via the Gram-matrix trick,
    so c[i, j] == 0 exactly iff the two points have identical coordinates.
    """
    if u.n != v.n:
        raise ValueError(f"clouds must have the same size ({u.n} != {v.n})")
    if u.d != v.d:
        raise ValueError(f"clouds must have the same dimension ({u.d} != {v.d})")
    diff = u.points[:, None, :] - v.points[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    if norm is Norm.L2:
        return CostMatrix(np.sqrt(sq))
    if norm is Norm.L2_SQUARED:
        return CostMatrix(sq)
    raise ValueError(f"unknown norm {norm!r}")


def apply_permutation(cloud: PointCloud, perm: Matching) -> PointCloud:
    """Reorder a cloud's rows: row i of the output is row perm[i] of the input."""
    if len(perm) != cloud.n:
        raise ValueError(
            f"permutation length {len(perm)} does not match cloud size {cloud.n}"
        )
    return PointCloud(cloud.points[perm.assign])


def substream(seed: int, *path: str | int) -> np.random.Generator:
    """Independent, reproducible random stream derived from one run seed.

    The stream is keyed by the (seed, *path) tuple through a counter-based
    Philox generator, so e.g. ``substream(s, "datagen")`` and
    ``substream(s, "init")`` never overlap and each is bit-reproducible
    across runs, platforms and worker counts. String labels are hashed with
    crc32, which is stable across processes (unlike ``hash``).
    """
    if not (0 <= int(seed) < 2**64):
        raise ValueError("seed must be a 64-bit unsigned integer")
    key = [int(seed)]
    for part in path:
        if isinstance(part, str):
            key.append(zlib.crc32(part.encode("utf-8")))
        else:
            key.append(int(part) & 0xFFFFFFFF)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
