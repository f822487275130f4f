"""External potential descriptors.

All supported potentials are static in time; the time argument is kept in
the evaluation signature because trajectory quadratures integrate V along
paths parametrized by t.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .interpolation import pchip


class Potential:
    kind = "zero"

    def values(self, x, t=0.0, units=None):
        raise NotImplementedError

    def is_zero(self):
        return False


class ZeroPotential(Potential):
    kind = "zero"

    def values(self, x, t=0.0, units=None):
        return np.zeros_like(np.asarray(x, dtype=float))

    def is_zero(self):
        return True


@dataclass
class ConstantPotential(Potential):
    v0: float

    kind = "constant"

    def values(self, x, t=0.0, units=None):
        return np.full_like(np.asarray(x, dtype=float), self.v0)


@dataclass
class HarmonicPotential(Potential):
    """V = m omega^2 x^2 / 2 about the origin."""

    omega: float

    kind = "harmonic"

    def __post_init__(self):
        if not self.omega > 0:
            raise ConfigError("harmonic omega must be positive")

    def values(self, x, t=0.0, units=None):
        mass = units.mass if units is not None else 1.0
        x = np.asarray(x, dtype=float)
        return 0.5 * mass * self.omega**2 * x**2


class TabulatedPotential(Potential):
    """Cubic interpolation of tabulated samples; clamped outside the table."""

    kind = "tabulated"

    def __init__(self, x_table, v_table):
        x_table = np.asarray(x_table, dtype=float)
        v_table = np.asarray(v_table, dtype=float)
        if x_table.ndim != 1 or x_table.shape != v_table.shape or x_table.size < 4:
            raise ConfigError("tabulated potential needs matching 1D tables, length >= 4")
        if np.any(np.diff(x_table) <= 0):
            raise ConfigError("tabulated potential abscissa must be strictly increasing")
        self._lo, self._hi = float(x_table[0]), float(x_table[-1])
        self._interp = pchip(x_table, v_table)

    def values(self, x, t=0.0, units=None):
        return self._interp(np.clip(np.asarray(x, dtype=float), self._lo, self._hi))


def potential_from_config(params):
    kind = params.get("potential.kind", "zero")
    if kind == "zero":
        return ZeroPotential()
    if kind == "constant":
        return ConstantPotential(float(params["potential.v0"]))
    if kind == "harmonic":
        return HarmonicPotential(float(params["potential.omega"]))
    if kind == "tabulated":
        xs = [float(v) for v in str(params["potential.x"]).split(";")]
        vs = [float(v) for v in str(params["potential.v"]).split(";")]
        return TabulatedPotential(xs, vs)
    raise ConfigError(f"unknown potential kind {kind!r}")
