"""Boxes, uniform grids, erosion, and cell covers.

Everything is measured in the infinity norm: balls are axis-aligned
hypercubes, so a grid cell of width ``eta`` is exactly the ``eta/2``-ball
around its centre.  All Lipschitz and velocity constants supplied elsewhere
must be taken with respect to this norm.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

__all__ = [
    "NORM_TAG",
    "norm",
    "Box",
    "erode_box",
    "Grid",
    "OutOfDomainError",
    "ball_cover",
]

NORM_TAG = "linf"


def norm(v) -> float:
    """Infinity norm of a vector (or absolute value of a scalar)."""
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        return float(abs(arr))
    return float(np.max(np.abs(arr)))


class OutOfDomainError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box; ``lower <= upper`` component-wise."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower/upper dimension mismatch")
        if any(l > u for l, u in zip(self.lower, self.upper)):
            raise ValueError(f"box has lower > upper: {self.lower} / {self.upper}")

    @classmethod
    def from_intervals(cls, intervals: Iterable[Iterable[float]]) -> "Box":
        pairs = [tuple(float(v) for v in iv) for iv in intervals]
        if any(len(p) != 2 for p in pairs):
            raise ValueError("each interval must be a [lower, upper] pair")
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def widths(self) -> tuple[float, ...]:
        return tuple(u - l for l, u in zip(self.lower, self.upper))

    @property
    def center(self) -> tuple[float, ...]:
        return tuple((l + u) / 2.0 for l, u in zip(self.lower, self.upper))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(
            np.all(x >= np.asarray(self.lower)) and np.all(x <= np.asarray(self.upper))
        )

    def contains_box(self, other: "Box") -> bool:
        return all(a <= b for a, b in zip(self.lower, other.lower)) and all(
            a >= b for a, b in zip(self.upper, other.upper)
        )

    def intersect(self, other: "Box") -> Optional["Box"]:
        lo = tuple(max(a, b) for a, b in zip(self.lower, other.lower))
        hi = tuple(min(a, b) for a, b in zip(self.upper, other.upper))
        if any(l > u for l, u in zip(lo, hi)):
            return None
        return Box(lo, hi)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return rng.uniform(lo, hi)


def erode_box(box: Box, eps: float) -> Optional[Box]:
    """Shrink ``box`` by ``eps`` on every face; ``None`` if it collapses.

    The result is the set of points whose closed ``eps``-ball lies inside
    ``box``; under the infinity norm that is ``[lower+eps, upper-eps]``.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if eps == 0:
        return box
    lo = tuple(l + eps for l in box.lower)
    hi = tuple(u - eps for u in box.upper)
    if any(l > u for l, u in zip(lo, hi)):
        return None
    return Box(lo, hi)


@dataclass(frozen=True)
class Grid:
    """Uniform lattice of half-open cells ``[k*eta, (k+1)*eta)`` per axis.

    The covered region is the index box ``lo..hi`` (inclusive).  Cell
    boundaries belong to the upper cell, so every covered point lies in
    exactly one cell and the top faces of the covered region are excluded.
    """

    eta: float
    anchor: tuple[float, ...]
    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not (len(self.anchor) == len(self.lo) == len(self.hi)):
            raise ValueError("anchor/lo/hi dimension mismatch")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError("empty index range")

    @classmethod
    def cover(cls, box: Box, eta: float, anchor: Optional[Iterable[float]] = None) -> "Grid":
        """Grid of cells covering ``box`` (top faces assigned upward).

        Per axis the covered indices run from ``floor((l-a)/eta)`` to
        ``ceil((u-a)/eta)-1``; a degenerate axis keeps the single cell
        containing its point.
        """
        if eta <= 0:
            raise ValueError("eta must be positive")
        a = tuple(float(v) for v in anchor) if anchor is not None else (0.0,) * box.dim
        if len(a) != box.dim:
            raise ValueError("anchor dimension mismatch")
        lo = []
        hi = []
        for l, u, ad in zip(box.lower, box.upper, a):
            k0 = math.floor((l - ad) / eta)
            k1 = math.ceil((u - ad) / eta) - 1
            lo.append(k0)
            hi.append(max(k1, k0))
        return cls(eta, a, tuple(lo), tuple(hi))

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def size(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n

    @property
    def covered_lower(self) -> tuple[float, ...]:
        return tuple(a + k * self.eta for a, k in zip(self.anchor, self.lo))

    @property
    def covered_upper(self) -> tuple[float, ...]:
        return tuple(a + (k + 1) * self.eta for a, k in zip(self.anchor, self.hi))

    def cell_index(self, x) -> tuple[int, ...]:
        """Index of the unique half-open cell containing ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = []
        for xd, ad, l, h in zip(x, self.anchor, self.lo, self.hi):
            k = math.floor((xd - ad) / self.eta)
            if k < l or k > h:
                raise OutOfDomainError(f"point {tuple(x)} outside covered region")
            idx.append(k)
        return tuple(idx)

    def cell_center(self, idx: tuple[int, ...]) -> np.ndarray:
        return np.array(
            [a + (k + 0.5) * self.eta for a, k in zip(self.anchor, idx)], dtype=float
        )

    def cell_box(self, idx: tuple[int, ...]) -> Box:
        lo = tuple(a + k * self.eta for a, k in zip(self.anchor, idx))
        return Box(lo, tuple(l + self.eta for l in lo))

    def flat(self, idx: tuple[int, ...]) -> int:
        rel = tuple(k - l for k, l in zip(idx, self.lo))
        return int(np.ravel_multi_index(rel, self.shape))

    def unflat(self, i: int) -> tuple[int, ...]:
        rel = np.unravel_index(i, self.shape)
        return tuple(int(r + l) for r, l in zip(rel, self.lo))

    def all_centers(self) -> np.ndarray:
        """Centres of every covered cell, flat order, shape ``(size, dim)``."""
        axes = [
            np.arange(l, h + 1, dtype=float) for l, h in zip(self.lo, self.hi)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        return (pts + 0.5) * self.eta + np.asarray(self.anchor)

    def centers_in_range(self, lower, upper, clip: bool = True):
        """Per-axis index bounds of cells whose centre lies in the closed box.

        Returns ``(klo, khi)`` integer arrays, or ``None`` when empty after
        clipping to the covered range (``clip=True``).
        """
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        a = np.asarray(self.anchor)
        klo = np.ceil((lower - a) / self.eta - 0.5).astype(int)
        khi = np.floor((upper - a) / self.eta - 0.5).astype(int)
        if clip:
            klo = np.maximum(klo, np.asarray(self.lo))
            khi = np.minimum(khi, np.asarray(self.hi))
        if np.any(klo > khi):
            return None
        return klo, khi

    def cubes_intersecting_range(self, lower, upper, clip: bool = True):
        """Like :meth:`centers_in_range` but for closed cell cubes."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        a = np.asarray(self.anchor)
        klo = (np.ceil((lower - a) / self.eta) - 1).astype(int)
        khi = np.floor((upper - a) / self.eta).astype(int)
        if clip:
            klo = np.maximum(klo, np.asarray(self.lo))
            khi = np.minimum(khi, np.asarray(self.hi))
        if np.any(klo > khi):
            return None
        return klo, khi


def _expand_ranges(klo, khi) -> frozenset[tuple[int, ...]]:
    axes = [range(int(l), int(h) + 1) for l, h in zip(klo, khi)]
    return frozenset(itertools.product(*axes))


def ball_cover(grid: Grid, center, radius: float) -> frozenset[tuple[int, ...]]:
    """Cells whose closed cube meets the closed ball, clipped to the grid.

    A zero-radius query degrades to point location and returns the single
    half-open cell containing ``center`` (empty if outside the grid).
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if radius == 0:
        try:
            return frozenset((grid.cell_index(center),))
        except OutOfDomainError:
            return frozenset()
    ranges = grid.cubes_intersecting_range(center - radius, center + radius)
    if ranges is None:
        return frozenset()
    return _expand_ranges(*ranges)
