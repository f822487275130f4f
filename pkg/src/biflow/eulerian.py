"""Conventional wavefunction evolution (the validation oracle), analytic
reference solutions, conservation-form residual checks, and trajectory
tracing through precomputed velocity fields.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConfigError, OutOfDomain, SingularDensity
from .fields import (
    CoherentState,
    Gaussian,
    GaussianTanhPhase,
    PlaneWave,
    RealPairField,
    Superposition,
    from_complex,
    make_state,
)
from .flow_models import _segments
from .interpolation import clamp_to_range, pchip, pchip_periodic
from .lagrangian import TrajectoryBundle, jacobian
from .numerics import diff1
from .potentials import ConstantPotential, HarmonicPotential, ZeroPotential

RESOLUTION_POINTS_PER_WAVE = 16
WINDOW_THRESHOLD = 1e-6


@dataclass
class FieldSeries:
    """Uniformly spaced snapshots of one evolving field."""

    fields: list
    potential: object
    dt: float

    def __post_init__(self):
        if len(self.fields) < 1:
            raise ConfigError("series needs at least one field")
        grid = self.fields[0].grid
        for f in self.fields:
            if f.grid != grid:
                raise ConfigError("all series fields must share one grid")

    @property
    def grid(self):
        return self.fields[0].grid

    @property
    def units(self):
        return self.fields[0].units

    def times(self):
        return np.array([f.time for f in self.fields])

    def norms(self):
        """Total density integral per slice (trapezoid; Riemann if periodic)."""
        grid = self.grid
        h = grid.spacing(0)
        out = []
        for f in self.fields:
            rho = f.density()
            if grid.periodic[0]:
                out.append(float(np.sum(rho) * h))
            else:
                out.append(float(np.trapz(rho, dx=h)))
        return np.array(out)


# ---------------------------------------------------------------------------
# Crank-Nicolson oracle


def _resolution_check(f0):
    grid = f0.grid
    h = grid.spacing(0)
    root = np.sqrt(f0.density())
    scale = root.max()
    if scale == 0.0:
        raise ConfigError("cannot evolve an identically zero state")
    g1 = diff1(f0.psi1, h, periodic=grid.periodic[0])
    g2 = diff1(f0.psi2, h, periodic=grid.periodic[0])
    k_est = max(np.max(np.abs(g1)), np.max(np.abs(g2))) / scale
    if k_est * h > 2.0 * np.pi / RESOLUTION_POINTS_PER_WAVE:
        raise ConfigError(
            f"grid spacing {h:.4g} cannot resolve the state: estimated wavenumber "
            f"{k_est:.4g} needs at least {RESOLUTION_POINTS_PER_WAVE} points per wave"
        )


class _CrankNicolson:
    """Unitary (Cayley-form) stepping with a tridiagonal solve per step.

    Non-periodic grids use truncated Dirichlet ends (the two boundary
    values are held fixed); periodic grids close the tridiagonal system
    with the Sherman-Morrison correction.
    """

    def __init__(self, grid, units, potential, dt):
        self.periodic = bool(grid.periodic[0])
        n = grid.n[0]
        h = grid.spacing(0)
        x = grid.axis(0)
        v = np.asarray(potential.values(x, 0.0, units), dtype=float)
        lam = units.hbar**2 / (2.0 * units.mass)
        h_main = 2.0 * lam / h**2 + v
        h_off = -lam / h**2
        z = 1j * dt / (2.0 * units.hbar)

        self.a_main = 1.0 + z * h_main
        self.a_off = z * h_off
        self.b_main = 1.0 - z * h_main
        self.b_off = -z * h_off
        self.n = n

        if self.periodic:
            gamma = -self.a_main[0]
            self.gamma = gamma
            main = self.a_main.copy()
            main[0] -= gamma
            main[-1] -= self.a_off**2 / gamma
            self._ab = self._banded(main, self.a_off, self.a_off)
            u = np.zeros(n, dtype=complex)
            u[0] = gamma
            u[-1] = self.a_off
            self._z_vec = solve_banded((1, 1), self._ab, u)
            self._v_sel = (1.0, self.a_off / gamma)
        else:
            main = self.a_main.copy()
            upper = np.full(n - 1, self.a_off, dtype=complex)
            lower = np.full(n - 1, self.a_off, dtype=complex)
            # frozen Dirichlet ends
            main[0] = 1.0
            main[-1] = 1.0
            upper[0] = 0.0
            lower[-1] = 0.0
            ab = np.zeros((3, n), dtype=complex)
            ab[0, 1:] = upper
            ab[1] = main
            ab[2, :-1] = lower
            self._ab = ab

    @staticmethod
    def _banded(main, off_up, off_lo):
        n = main.shape[0]
        ab = np.zeros((3, n), dtype=complex)
        ab[0, 1:] = off_up
        ab[1] = main
        ab[2, :-1] = off_lo
        return ab

    def _apply_b(self, psi):
        if self.periodic:
            return self.b_main * psi + self.b_off * (np.roll(psi, 1) + np.roll(psi, -1))
        out = np.empty_like(psi)
        out[1:-1] = self.b_main[1:-1] * psi[1:-1] + self.b_off * (psi[:-2] + psi[2:])
        out[0] = psi[0]
        out[-1] = psi[-1]
        return out

    def step(self, psi):
        rhs = self._apply_b(psi)
        if not self.periodic:
            return solve_banded((1, 1), self._ab, rhs)
        y = solve_banded((1, 1), self._ab, rhs)
        v1, vn = self._v_sel
        corr = (v1 * y[0] + vn * y[-1]) / (1.0 + v1 * self._z_vec[0] + vn * self._z_vec[-1])
        return y - corr * self._z_vec


def evolve_linear(f0, potential, dt, t_final, keep_every=1):
    """Evolve with Crank-Nicolson and return every kept snapshot.

    t_final must be an integer number of steps; the grid must resolve the
    state (at least RESOLUTION_POINTS_PER_WAVE points per oscillation of
    the fastest component).
    """
    if f0.grid.dimension != 1:
        raise ConfigError("the oracle integrates one-dimensional states")
    if dt <= 0:
        raise ConfigError("dt must be positive")
    n_steps = int(round(t_final / dt))
    if n_steps < 1 or abs(n_steps * dt - t_final) > 1e-9 * max(1.0, abs(t_final)):
        raise ConfigError("t_final must be a positive multiple of dt")
    _resolution_check(f0)

    stepper = _CrankNicolson(f0.grid, f0.units, potential, dt)
    psi = f0.as_complex()
    fields = [f0]
    for step in range(1, n_steps + 1):
        psi = stepper.step(psi)
        if step % keep_every == 0 or step == n_steps:
            fields.append(from_complex(f0.grid, f0.units, psi, f0.time + step * dt))
    return FieldSeries(fields, potential, dt * keep_every)


# ---------------------------------------------------------------------------
# Closed-form references


def analytic_solution(grid, spec, potential, t, units):
    """Exact solution for the supported (state, potential) pairs."""
    x = grid.axis(0)
    psi = _analytic_values(x, spec, potential, t, units)
    return from_complex(grid, units, psi, t)


def _analytic_values(x, spec, potential, t, units):
    hbar, m = units.hbar, units.mass
    if isinstance(potential, ZeroPotential):
        v0 = 0.0
    elif isinstance(potential, ConstantPotential):
        v0 = potential.v0
    elif isinstance(potential, HarmonicPotential):
        v0 = None
    else:
        raise ConfigError(f"no closed-form solution with potential {potential.kind!r}")

    if isinstance(spec, PlaneWave) and v0 is not None:
        k = spec.k[0]
        phase = k * x - hbar * k**2 * t / (2.0 * m) - v0 * t / hbar
        return np.exp(1j * phase)
    if isinstance(spec, Gaussian) and v0 is not None:
        c = spec.center[0]
        k = spec.k[0]
        sigma2 = spec.width**2
        sigma2_t = sigma2 + 1j * hbar * t / m
        drift = hbar * k * t / m
        amp = np.sqrt(sigma2 / sigma2_t)
        return (
            amp
            * np.exp(-((x - c - drift) ** 2) / (2.0 * sigma2_t))
            * np.exp(1j * (k * (x - c) - hbar * k**2 * t / (2.0 * m) - v0 * t / hbar))
        )
    if isinstance(spec, CoherentState) and isinstance(potential, HarmonicPotential):
        if abs(spec.omega - potential.omega) > 1e-12:
            raise ConfigError("coherent-state solution needs matching oscillator frequency")
        w = spec.omega
        x_c = spec.x0 * np.cos(w * t)
        p_c = -m * w * spec.x0 * np.sin(w * t)
        norm = (m * w / (np.pi * hbar)) ** 0.25
        return (
            norm
            * np.exp(-m * w * (x - x_c) ** 2 / (2.0 * hbar))
            * np.exp(1j * ((p_c * x - 0.5 * p_c * x_c) / hbar - 0.5 * w * t))
        )
    if isinstance(spec, Superposition) and v0 is not None:
        total = np.zeros_like(x, dtype=complex)
        for weight, sub in spec.terms:
            total += weight * _analytic_values(x, sub, potential, t, units)
        return total
    raise ConfigError(
        f"no closed-form solution for state {getattr(spec, 'kind', spec)!r} "
        f"with potential {potential.kind!r}"
    )


# ---------------------------------------------------------------------------
# Conservation-form residual


def _window_mask(f, threshold=WINDOW_THRESHOLD):
    root = np.sqrt(f.density())
    return root >= threshold * root.max()


def conservation_residual(series, model, window_threshold=WINDOW_THRESHOLD):
    """Centered-difference residual of d(rho_a)/dt + div(rho_a v_a) per
    phase and interior time slice, max-norm over the unmasked active
    window."""
    if getattr(model, "name", "") == "eisenhart":
        from .eisenhart import eisenhart_conservation_residual

        return eisenhart_conservation_residual(series, model, window_threshold)
    if len(series.fields) < 3:
        raise ConfigError("residual needs at least three time slices")
    grid = series.grid
    dt = series.dt
    out = []
    dens_cache = [model.phase_densities(f) for f in series.fields]
    for i in range(1, len(series.fields) - 1):
        f_now = series.fields[i]
        flows = model.phase_flows(f_now)
        window = _window_mask(f_now, window_threshold)
        row = []
        for a, flow in enumerate(flows):
            ddt = (dens_cache[i + 1][a] - dens_cache[i - 1][a]) / (2.0 * dt)
            div = np.zeros_like(ddt)
            for axis in range(grid.dimension):
                current = flow.density * flow.velocity[axis]
                current = np.where(flow.mask, current, 0.0)
                div += diff1(
                    current, grid.spacing(axis), periodic=grid.periodic[axis], axis=axis
                )
            valid = flow.mask & window & _interior_mask(flow.mask, grid)
            row.append(float(np.max(np.abs(np.where(valid, ddt + div, 0.0)))))
        out.append(row)
    return np.array(out)


def _interior_mask(mask, grid):
    """Points whose divergence stencil uses only unmasked, interior data."""
    ok = mask.copy()
    for axis in range(grid.dimension):
        if grid.periodic[axis]:
            ok &= np.roll(mask, 1, axis=axis) & np.roll(mask, -1, axis=axis)
        else:
            sl_lo = [slice(None)] * mask.ndim
            sl_hi = [slice(None)] * mask.ndim
            sl_lo[axis] = slice(0, 2)
            sl_hi[axis] = slice(-2, None)
            ok[tuple(sl_lo)] = False
            ok[tuple(sl_hi)] = False
            shifted = np.ones_like(mask)
            sl_f = [slice(None)] * mask.ndim
            sl_b = [slice(None)] * mask.ndim
            sl_f[axis] = slice(None, -1)
            sl_b[axis] = slice(1, None)
            shifted[tuple(sl_f)] &= mask[tuple(sl_b)]
            shifted[tuple(sl_b)] &= mask[tuple(sl_f)]
            ok &= shifted
    return ok


# ---------------------------------------------------------------------------
# Semi-Lagrangian tracing through stored velocity fields


class _SliceVelocity:
    """Velocity interpolant for one phase on one time slice, restricted to
    the contiguous usable run covering the traced positions."""

    def __init__(self, field, model, phase, window_threshold):
        vp = model.velocity_pair(field)
        self.x = field.grid.axis(0)
        self.h = field.grid.spacing(0)
        self.periodic = bool(field.grid.periodic[0])
        self.period = field.grid.period(0) if self.periodic else None
        v = (vp.v1 if phase == 1 else vp.v2)[0]
        mask = (vp.mask1 if phase == 1 else vp.mask2) & _window_mask(field, window_threshold)
        self.v = v
        self.mask = mask
        self.time = field.time
        self._interp = None
        self._range = None

    def _build(self, q_min, q_max):
        if self.periodic and np.all(self.mask):
            self._interp = pchip_periodic(self.x, self.v, self.period)
            self._range = None
            return
        for start, end in _segments(self.mask):
            if self.x[start] <= q_min and self.x[end - 1] >= q_max:
                seg = slice(start, end)
                interp = pchip(self.x[seg], self.v[seg])
                lo, hi = self.x[start], self.x[end - 1]
                margin = 5.0 * self.h
                self._interp = lambda q: interp(clamp_to_range(q, lo, hi, margin, self.time))
                self._range = (lo, hi)
                return
        if q_min < self.x[0] or q_max > self.x[-1]:
            raise OutOfDomain(
                f"traced positions [{q_min:.4g}, {q_max:.4g}] left the grid",
                where=float(q_min),
                time=self.time,
            )
        raise SingularDensity(
            f"traced positions [{q_min:.4g}, {q_max:.4g}] enter a masked region",
            where=float(q_min),
            time=self.time,
        )

    def __call__(self, q):
        q_min, q_max = float(np.min(q)), float(np.max(q))
        if self._interp is None or (
            self._range is not None
            and (q_min < self._range[0] - 4.0 * self.h or q_max > self._range[1] + 4.0 * self.h)
        ):
            self._build(q_min, q_max)
        return self._interp(q)


def trace_in_fields(series, model, labels, phase, window_threshold=WINDOW_THRESHOLD):
    """Integrate dq/dt = v_phase(q, t) with RK4 through the stored fields,
    interpolating monotonically in space and linearly in time; positions
    are recorded at every series time."""
    if series.grid.dimension != 1:
        raise ConfigError("tracing is one-dimensional")
    labels = np.asarray(labels, dtype=float)
    x = series.grid.axis(0)
    if labels.min() < x[0] or labels.max() > x[-1]:
        raise ConfigError("labels must start inside the grid")

    f0 = series.fields[0]
    if series.grid.periodic[0]:
        psi0 = pchip_periodic(x, f0.component(phase), series.grid.period(0))(labels)
    else:
        psi0 = pchip(x, f0.component(phase))(labels)

    dt = series.dt
    q = labels.copy()
    positions = [q.copy()]
    slice_cache = {}

    def slice_velocity(i):
        if i not in slice_cache:
            slice_cache[i] = _SliceVelocity(series.fields[i], model, phase, window_threshold)
            for key in [k for k in slice_cache if k < i - 1]:
                del slice_cache[key]
        return slice_cache[i]

    for i in range(len(series.fields) - 1):
        v_now = slice_velocity(i)
        v_next = slice_velocity(i + 1)

        def v_mid(p):
            return 0.5 * (v_now(p) + v_next(p))

        k1 = v_now(q)
        k2 = v_mid(q + 0.5 * dt * k1)
        k3 = v_mid(q + 0.5 * dt * k2)
        k4 = v_next(q + dt * k3)
        q = q + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        positions.append(q.copy())

    return TrajectoryBundle(
        phase=phase,
        labels=labels,
        psi0=psi0,
        times=[f.time for f in series.fields],
        positions=positions,
        periodic=bool(series.grid.periodic[0]),
        period=series.grid.period(0) if series.grid.periodic[0] else None,
        eps_floor=0.0,
    )


def invariant_ratio_series(series, bundle, window_threshold=WINDOW_THRESHOLD):
    """Re-measured charge * stretch along traced paths, relative to the
    initial charge: one row per stored time."""
    x = series.grid.axis(0)
    periodic = bool(series.grid.periodic[0])
    rows = []
    for idx, f in enumerate(series.fields):
        comp = f.component(bundle.phase)
        q = bundle.positions[idx]
        if periodic:
            values = pchip_periodic(x, comp, series.grid.period(0))(q)
        else:
            window = _window_mask(f, window_threshold)
            start, end = _covering_segment(window, x, float(q.min()), float(q.max()), f.time)
            seg = slice(start, end)
            values = pchip(x[seg], comp[seg])(q)
        jac = jacobian(bundle, idx)
        rows.append(values * jac / bundle.psi0)
    return np.array(rows)


def _covering_segment(mask, x, q_min, q_max, time):
    for start, end in _segments(mask):
        if x[start] <= q_min and x[end - 1] >= q_max:
            return start, end
    raise SingularDensity(
        f"positions [{q_min:.4g}, {q_max:.4g}] not covered by the active window",
        where=q_min,
        time=time,
    )


def benchmark_state_spec():
    """The standard verification state used across the test scenarios."""
    return GaussianTanhPhase(center=0.0, width=2.0, a=0.7, b=0.45, sigma_s=1.0)


def benchmark_state(grid, units=None):
    return make_state(grid, benchmark_state_spec(), units)
