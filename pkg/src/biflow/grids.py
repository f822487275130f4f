"""Unit system and uniform spatial grids (1D and 2D)."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

MIN_POINTS = 8


@dataclass(frozen=True)
class UnitSystem:
    """Physical constants of the run.  Defaults are hbar = mass = 1."""

    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if not (self.hbar > 0 and self.mass > 0):
            raise ConfigError("hbar and mass must be strictly positive")


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform rectangular grid, one or two axes.

    Spacing is (x_max - x_min)/(N - 1) on a non-periodic axis and
    (x_max - x_min)/N on a periodic one (the right endpoint is then
    excluded, it aliases the left one).
    """

    x_min: tuple
    x_max: tuple
    n: tuple
    periodic: tuple = None

    def __post_init__(self):
        x_min = _as_tuple(self.x_min)
        x_max = _as_tuple(self.x_max)
        n = _as_tuple(self.n, cast=int)
        periodic = self.periodic
        if periodic is None:
            periodic = (False,) * len(n)
        periodic = _as_tuple(periodic, cast=bool)
        if not (len(x_min) == len(x_max) == len(n) == len(periodic)):
            raise ConfigError("grid axis descriptors have mismatched lengths")
        if len(n) not in (1, 2):
            raise ConfigError("only 1D and 2D grids are supported")
        for lo, hi, count in zip(x_min, x_max, n):
            if count < MIN_POINTS:
                raise ConfigError(f"need at least {MIN_POINTS} points per axis, got {count}")
            if not hi > lo:
                raise ConfigError("grid extent must have x_max > x_min")
        object.__setattr__(self, "x_min", x_min)
        object.__setattr__(self, "x_max", x_max)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "periodic", periodic)

    @property
    def dimension(self):
        return len(self.n)

    @property
    def shape(self):
        return self.n

    def spacing(self, axis=0):
        span = self.x_max[axis] - self.x_min[axis]
        if self.periodic[axis]:
            return span / self.n[axis]
        return span / (self.n[axis] - 1)

    def axis(self, axis=0):
        """Coordinate samples along one axis."""
        if self.periodic[axis]:
            return self.x_min[axis] + self.spacing(axis) * np.arange(self.n[axis])
        return np.linspace(self.x_min[axis], self.x_max[axis], self.n[axis])

    def meshes(self):
        """Coordinate arrays broadcast to the full grid shape (ij indexing)."""
        axes = [self.axis(a) for a in range(self.dimension)]
        if self.dimension == 1:
            return (axes[0],)
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def period(self, axis=0):
        return self.x_max[axis] - self.x_min[axis]


def grid_1d(x_min, x_max, n, periodic=False):
    return SpatialGrid((x_min,), (x_max,), (n,), (periodic,))


def grid_2d(x_min, x_max, n, periodic=(False, False)):
    return SpatialGrid(tuple(x_min), tuple(x_max), tuple(n), tuple(periodic))


def _as_tuple(value, cast=float):
    if np.isscalar(value):
        return (cast(value),)
    return tuple(cast(v) for v in value)
