"""Axis-aligned search regions, isotropic volume expansion, and latin hypercube designs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box with strictly positive width on every axis."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if not np.all(lower < upper):
            raise ValueError("box must satisfy lower < upper componentwise")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def circumradius(self) -> float:
        """Distance from the center to a corner (half the diagonal)."""
        return float(0.5 * np.linalg.norm(self.widths))

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def sample_uniform(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(count, self.dim))

    def inflate(self, factor: float) -> "Box":
        """Scale every half-width by `factor`, keeping the center."""
        c, half = self.center, 0.5 * self.widths * factor
        return Box(c - half, c + half)


def expand_box(box: Box, growth_factor: float) -> Box:
    """Grow the box volume by `growth_factor`, isotropically about its center.

    Every half-width is multiplied by growth_factor**(1/d) so the center is
    preserved exactly and the volume scales by exactly growth_factor.
    """
    if not growth_factor > 1.0:
        raise ValueError("growth_factor must exceed 1")
    return box.inflate(growth_factor ** (1.0 / box.dim))


def latin_hypercube(box: Box, m: int, rng: np.random.Generator) -> np.ndarray:
    """Sample m points in the box, one per axis-aligned stratum on every axis.

    Each axis is divided into m equal-width strata; a uniform point is drawn in
    each stratum and the strata are permuted independently per axis. Returns an
    (m, d) array of points strictly inside the box.
    """
    if m < 1:
        raise ValueError("m must be positive")
    d = box.dim
    unit = np.empty((m, d))
    for j in range(d):
        strata = rng.permutation(m)
        unit[:, j] = (strata + rng.random(m)) / m
    points = box.lower + unit * box.widths
    # rng.random can return exactly 0.0; keep points strictly interior.
    return np.clip(points, np.nextafter(box.lower, box.upper), np.nextafter(box.upper, box.lower))
