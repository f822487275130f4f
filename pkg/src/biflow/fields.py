"""Two-component real wavefunctions on grids, analytic initial states,
and the global symmetry transformations acting on them.

The two real components are the fundamental stored objects; complex
arrays appear only as transient conveniences.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, OutOfDomain
from .grids import SpatialGrid, UnitSystem
from .interpolation import pchip, pchip_periodic

# Antisymmetric coupling matrix between the two components; squares to -I.
GAMMA = np.array([[0.0, 1.0], [-1.0, 0.0]])

UNDEFINED_PHASE_FLOOR = 1e-12


@dataclass(frozen=True)
class RealPairField:
    grid: SpatialGrid
    units: UnitSystem
    psi1: np.ndarray
    psi2: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        psi1 = np.asarray(self.psi1, dtype=float)
        psi2 = np.asarray(self.psi2, dtype=float)
        if psi1.shape != self.grid.shape or psi2.shape != self.grid.shape:
            raise ConfigError(
                f"component shape {psi1.shape}/{psi2.shape} does not match grid {self.grid.shape}"
            )
        if not (np.all(np.isfinite(psi1)) and np.all(np.isfinite(psi2))):
            raise ConfigError("field samples must be finite")
        object.__setattr__(self, "psi1", psi1)
        object.__setattr__(self, "psi2", psi2)

    def component(self, phase):
        return self.psi1 if phase == 1 else self.psi2

    def density(self):
        return self.psi1**2 + self.psi2**2

    def as_complex(self):
        return self.psi1 + 1j * self.psi2

    def replace(self, **kw):
        data = {
            "grid": self.grid,
            "units": self.units,
            "psi1": self.psi1,
            "psi2": self.psi2,
            "time": self.time,
        }
        data.update(kw)
        return RealPairField(**data)


@dataclass(frozen=True)
class PolarField:
    """Polar representation rho, S with an undefined-phase mask where the
    density is too small for the phase to mean anything."""

    grid: SpatialGrid
    units: UnitSystem
    rho: np.ndarray
    phase_action: np.ndarray  # S, in action units, unwrapped along axis 0
    undefined: np.ndarray  # True where the phase is not defined
    time: float = 0.0

    def reconstruct(self):
        angle = self.phase_action / self.units.hbar
        root = np.sqrt(self.rho)
        return RealPairField(
            self.grid, self.units, root * np.cos(angle), root * np.sin(angle), self.time
        )


def density(f):
    """Pointwise quantal density psi1^2 + psi2^2."""
    return f.density()


def from_complex(grid, units, values, time=0.0):
    values = np.asarray(values)
    return RealPairField(grid, units, values.real.copy(), values.imag.copy(), time)


# ---------------------------------------------------------------------------
# Initial-state library


@dataclass(frozen=True)
class PlaneWave:
    k: tuple

    kind = "plane_wave"

    def __post_init__(self):
        k = self.k
        if np.isscalar(k):
            k = (float(k),)
        object.__setattr__(self, "k", tuple(float(v) for v in k))


@dataclass(frozen=True)
class Gaussian:
    center: tuple
    width: float
    k: tuple = (0.0,)

    kind = "gaussian"

    def __post_init__(self):
        center = self.center
        if np.isscalar(center):
            center = (float(center),)
        k = self.k
        if np.isscalar(k):
            k = (float(k),)
        object.__setattr__(self, "center", tuple(float(v) for v in center))
        object.__setattr__(self, "k", tuple(float(v) for v in k))
        if not self.width > 0:
            raise ConfigError("gaussian width must be positive")


@dataclass(frozen=True)
class GaussianTanhPhase:
    """Gaussian envelope with phase profile a + b*tanh(x/sigma_s).

    With a = 0.7, b = 0.45 the phase stays inside (0.25, 1.15), so both
    components keep a fixed sign wherever the envelope is non-negligible.
    One spatial dimension only.
    """

    center: float
    width: float
    a: float
    b: float
    sigma_s: float

    kind = "gaussian_tanh_phase"

    def __post_init__(self):
        for name in ("center", "width", "a", "b", "sigma_s"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if not (self.width > 0 and self.sigma_s > 0):
            raise ConfigError("width and sigma_s must be positive")

    def envelope(self, x):
        return np.exp(-((x - self.center) ** 2) / (2.0 * self.width**2))

    def phase(self, x):
        return self.a + self.b * np.tanh((x - self.center) / self.sigma_s)


@dataclass(frozen=True)
class CoherentState:
    """Ground-state-width packet displaced to x0 in a harmonic well."""

    omega: float
    x0: float

    kind = "coherent_state"

    def __post_init__(self):
        if not self.omega > 0:
            raise ConfigError("omega must be positive")
        if not np.isfinite(self.x0):
            raise ConfigError("x0 must be finite")


@dataclass(frozen=True)
class Superposition:
    terms: tuple  # of (complex weight, spec)

    kind = "superposition"

    def __post_init__(self):
        terms = tuple((complex(w), s) for w, s in self.terms)
        if not terms:
            raise ConfigError("superposition needs at least one term")
        object.__setattr__(self, "terms", terms)


def make_state(grid, spec, units=None, time=0.0):
    """Sample an analytic initial state on the grid at t = 0."""
    units = units or UnitSystem()
    psi1, psi2 = _sample(grid, spec, units)
    return RealPairField(grid, units, psi1, psi2, time)


def _sample(grid, spec, units):
    meshes = grid.meshes()
    if isinstance(spec, PlaneWave):
        k = _match_dim(spec.k, grid, "plane_wave k")
        phase = sum(kv * mesh for kv, mesh in zip(k, meshes))
        return np.cos(phase), np.sin(phase)
    if isinstance(spec, Gaussian):
        center = _match_dim(spec.center, grid, "gaussian center")
        k = _match_dim(spec.k, grid, "gaussian k")
        r2 = sum((mesh - c) ** 2 for mesh, c in zip(meshes, center))
        env = np.exp(-r2 / (2.0 * spec.width**2))
        phase = sum(kv * (mesh - c) for kv, mesh, c in zip(k, meshes, center))
        return env * np.cos(phase), env * np.sin(phase)
    if isinstance(spec, GaussianTanhPhase):
        if grid.dimension != 1:
            raise ConfigError("gaussian_tanh_phase is a one-dimensional state")
        x = meshes[0]
        env = spec.envelope(x)
        angle = spec.phase(x)
        return env * np.cos(angle), env * np.sin(angle)
    if isinstance(spec, CoherentState):
        if grid.dimension != 1:
            raise ConfigError("coherent_state is a one-dimensional state")
        x = meshes[0]
        m, hbar, w = units.mass, units.hbar, spec.omega
        norm = (m * w / (np.pi * hbar)) ** 0.25
        env = norm * np.exp(-m * w * (x - spec.x0) ** 2 / (2.0 * hbar))
        return env, np.zeros_like(env)
    if isinstance(spec, Superposition):
        psi = np.zeros(grid.shape, dtype=complex)
        for weight, sub in spec.terms:
            p1, p2 = _sample(grid, sub, units)
            psi += weight * (p1 + 1j * p2)
        return psi.real.copy(), psi.imag.copy()
    raise ConfigError(f"unknown state spec {spec!r}")


def _match_dim(values, grid, what):
    if len(values) != grid.dimension:
        raise ConfigError(f"{what} has {len(values)} components for a {grid.dimension}D grid")
    return values


# ---------------------------------------------------------------------------
# Polar decomposition


def polar_decompose(f, floor_frac=UNDEFINED_PHASE_FLOOR):
    """Split into (rho, S) with S unwrapped along axis 0.

    Points with rho below floor_frac * max(rho) are flagged undefined and
    break the unwrapping runs; no phase value is guessed there.
    """
    rho = f.density()
    undefined = rho < floor_frac * rho.max() if rho.max() > 0 else np.ones_like(rho, bool)
    angle = np.arctan2(f.psi2, f.psi1)
    unwrapped = np.array(angle, dtype=float)
    if f.grid.dimension == 1:
        _unwrap_runs(unwrapped, undefined)
    else:
        for j in range(unwrapped.shape[1]):
            _unwrap_runs(unwrapped[:, j], undefined[:, j])
    return PolarField(f.grid, f.units, rho, f.units.hbar * unwrapped, undefined, f.time)


def _unwrap_runs(angle, undefined):
    """Unwrap each contiguous defined run in place, left to right."""
    n = angle.shape[0]
    i = 0
    while i < n:
        if undefined[i]:
            i += 1
            continue
        j = i
        while j < n and not undefined[j]:
            j += 1
        angle[i:j] = np.unwrap(angle[i:j])
        i = j


# ---------------------------------------------------------------------------
# Symmetry transformations


def gauge_rotate(f, s):
    """Global rotation of the component pair by angle m*s/hbar.

    Leaves the density invariant and shifts the phase by m*s.
    """
    theta = f.units.mass * s / f.units.hbar
    c, sn = np.cos(theta), np.sin(theta)
    return f.replace(psi1=c * f.psi1 - sn * f.psi2, psi2=sn * f.psi1 + c * f.psi2)


def galilean_boost(f, u, t):
    """Field seen from a frame moving with velocity u, resampled on the
    same grid.  Density transports unchanged; the phase picks up
    m*u.x - m*u^2*t/2 (evaluated at the original coordinate)."""
    if abs(f.time - t) > 1e-12:
        raise ConfigError(f"field time stamp {f.time} does not match boost time {t}")
    grid = f.grid
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape[0] != grid.dimension:
        raise ConfigError("boost velocity dimension does not match the grid")

    psi1, psi2 = f.psi1, f.psi2
    if t != 0.0:
        for axis in range(grid.dimension):
            shift = u[axis] * t
            if shift == 0.0:
                continue
            psi1 = _resample_shift(psi1, grid, axis, shift)
            psi2 = _resample_shift(psi2, grid, axis, shift)

    # Original coordinates of each output point: x = x' + u t.
    meshes = grid.meshes()
    u_dot_x = sum(uv * (mesh + uv * t) for uv, mesh in zip(u, meshes))
    m, hbar = f.units.mass, f.units.hbar
    theta = (m * u_dot_x - 0.5 * m * float(u @ u) * t) / hbar
    c, sn = np.cos(theta), np.sin(theta)
    return f.replace(psi1=c * psi1 - sn * psi2, psi2=sn * psi1 + c * psi2)


def _resample_shift(values, grid, axis, shift):
    """Monotone cubic resample of one axis at x + shift."""
    x = grid.axis(axis)
    moved = np.moveaxis(values, axis, 0)
    if grid.periodic[axis]:
        period = grid.period(axis)
        x_ext = np.concatenate([x - period, x, x + period])
        y_ext = np.concatenate([moved, moved, moved], axis=0)
        interp = pchip(x_ext, y_ext)
        q = x[0] + np.mod(x + shift - x[0], period)
    else:
        q = x + shift
        if q.min() < x[0] - 1e-12 or q.max() > x[-1] + 1e-12:
            raise OutOfDomain(
                f"boost shift {shift:.6g} resamples outside the non-periodic domain"
            )
        interp = pchip(x, moved)
        q = np.clip(q, x[0], x[-1])
    return np.moveaxis(interp(q), 0, axis)


# ---------------------------------------------------------------------------
# Small shared helpers


def envelope_window(f, threshold=1e-6):
    """Index range (1D) where sqrt(rho) exceeds threshold * its max."""
    root = np.sqrt(f.density())
    keep = root >= threshold * root.max()
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        raise ConfigError("field vanishes everywhere at this threshold")
    return int(idx[0]), int(idx[-1])


def rel_l2(field_a, field_b, mask=None):
    """Relative L2 distance between two fields on the same grid, both
    components combined."""
    d1 = field_a.psi1 - field_b.psi1
    d2 = field_a.psi2 - field_b.psi2
    r1, r2 = field_b.psi1, field_b.psi2
    if mask is not None:
        d1, d2, r1, r2 = d1[mask], d2[mask], r1[mask], r2[mask]
    num = np.sqrt(np.sum(d1**2 + d2**2))
    den = np.sqrt(np.sum(r1**2 + r2**2))
    return float(num / den) if den > 0 else float(num)
