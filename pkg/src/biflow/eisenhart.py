"""External-potential propagation through the five-dimensional lift.

The wavefunction is embedded as phi(x, s) = e^{i m s / hbar} psi(x) on a
periodic fifth coordinate of period 2 pi hbar / m.  Both real components
of phi are then conserved charges of a free-style two-family flow whose
s-velocity collapses to V/m, so trajectories live on the (x, s) cylinder
and carry 2x2 label-to-position determinants.

Label combs are offset (and sheared by the initial phase profile) so
that no label starts on a zero of its carried charge; the shear has unit
Jacobian, leaving the conservation law untouched.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    ConstraintViolation,
    CrossingDetected,
    OutOfDomain,
    SingularDensity,
)
from .fields import RealPairField, envelope_window, polar_decompose
from .grids import grid_1d
from .interpolation import PeriodicSplineBatch, clamp_to_range, pchip
from .lagrangian import Diagnostics, PropagationOptions
from .numerics import diff1, spectral_diff_periodic
from .potentials import ZeroPotential
from .stepping import adaptive_rk4_drive

DEFAULT_S_POINTS = 16


def s_period(units):
    return 2.0 * np.pi * units.hbar / units.mass


@dataclass(frozen=True)
class EisenhartField:
    """Both lifted components sampled on an (x, s) grid; the s axis is
    uniform and periodic."""

    grid: object  # 1D spatial grid
    units: object
    s_offset: float
    phi1: np.ndarray  # (n_x, m)
    phi2: np.ndarray
    potential: object
    time: float = 0.0

    def __post_init__(self):
        if self.grid.dimension != 1:
            raise ConfigError("lifted fields use a 1D spatial grid")
        m = self.phi1.shape[1] if self.phi1.ndim == 2 else 0
        if m < 8 or self.phi1.shape != (self.grid.n[0], m) or self.phi2.shape != self.phi1.shape:
            raise ConfigError("lifted components must be (n_x, m>=8) arrays")

    @property
    def n_s(self):
        return self.phi1.shape[1]

    @property
    def period(self):
        return s_period(self.units)

    def s_nodes(self):
        return self.s_offset + self.period * np.arange(self.n_s) / self.n_s


def lift(f, m_s=DEFAULT_S_POINTS, potential=None, s_offset=0.0):
    """Embed a 1D state: phi(x, s_j) is the component pair rotated by
    m s_j / hbar.  The rotation is exact, so the consistency constraint
    holds to rounding."""
    if m_s < 8:
        raise ConfigError("need at least 8 fifth-coordinate points")
    units = f.units
    s = s_offset + s_period(units) * np.arange(m_s) / m_s
    theta = units.mass * s / units.hbar
    c, sn = np.cos(theta)[None, :], np.sin(theta)[None, :]
    phi1 = c * f.psi1[:, None] - sn * f.psi2[:, None]
    phi2 = sn * f.psi1[:, None] + c * f.psi2[:, None]
    return EisenhartField(
        f.grid, units, s_offset, phi1, phi2, potential or ZeroPotential(), f.time
    )


def extract_with_spread(e):
    """Invert the lift by averaging the back-rotated components over the
    s nodes; the per-node scatter measures constraint violation."""
    units = e.units
    theta = units.mass * e.s_nodes() / units.hbar
    c, sn = np.cos(theta)[None, :], np.sin(theta)[None, :]
    est1 = c * e.phi1 + sn * e.phi2
    est2 = c * e.phi2 - sn * e.phi1
    psi1 = est1.mean(axis=1)
    psi2 = est2.mean(axis=1)
    scale = np.sqrt(np.sum(psi1**2 + psi2**2))
    dev = np.sqrt(np.sum((est1 - psi1[:, None]) ** 2 + (est2 - psi2[:, None]) ** 2, axis=0))
    spread = float(dev.max() / scale) if scale > 0 else float(dev.max())
    out = RealPairField(e.grid, units, psi1, psi2, e.time)
    return out, spread


def extract(e, tolerance=1e-6):
    out, spread = extract_with_spread(e)
    if spread > 100.0 * tolerance:
        raise ConstraintViolation(
            f"per-s extraction spread {spread:.3g} exceeds 100 x tolerance {tolerance:.3g}"
        )
    return out


def constraint_residual(e):
    """Relative residual of the fifth-momentum eigenvalue condition,
    using the spectral s-derivative (exact for band-limited data)."""
    units = e.units
    p = e.period
    ratio = units.mass / units.hbar
    d1 = spectral_diff_periodic(e.phi1, p, axis=1)
    d2 = spectral_diff_periodic(e.phi2, p, axis=1)
    res = np.abs(d1 + ratio * e.phi2) + np.abs(d2 - ratio * e.phi1)
    scale = max(np.max(np.abs(e.phi1)), np.max(np.abs(e.phi2)), 1e-300)
    return float(res.max() / (ratio * scale))


def wave5d_residual(lifted_series, dt):
    """Centered-difference residual of the five-dimensional wave form
    d2/dtds + (1/2) d2/dx2 + (V/m) d2/ds2, max norm over interior points."""
    if len(lifted_series) < 3:
        raise ConfigError("need at least three time slices")
    e0 = lifted_series[0]
    grid, units = e0.grid, e0.units
    h = grid.spacing(0)
    periodic = grid.periodic[0]
    p = e0.period
    x = grid.axis(0)
    v_over_m = np.asarray(e0.potential.values(x, 0.0, units), dtype=float) / units.mass
    worst = 0.0
    for i in range(1, len(lifted_series) - 1):
        for comp in ("phi1", "phi2"):
            prev = getattr(lifted_series[i - 1], comp)
            now = getattr(lifted_series[i], comp)
            nxt = getattr(lifted_series[i + 1], comp)
            dt_phi = (nxt - prev) / (2.0 * dt)
            term_ts = spectral_diff_periodic(dt_phi, p, axis=1)
            term_xx = 0.5 * _second_x(now, h, periodic)
            term_ss = v_over_m[:, None] * spectral_diff_periodic(now, p, axis=1, order=2)
            res = term_ts + term_xx + term_ss
            interior = res if periodic else res[2:-2]
            worst = max(worst, float(np.max(np.abs(interior))))
    return worst


def _second_x(arr, h, periodic):
    if periodic:
        return (np.roll(arr, -1, axis=0) - 2.0 * arr + np.roll(arr, 1, axis=0)) / (h * h)
    out = np.empty_like(arr)
    out[1:-1] = (arr[2:] - 2.0 * arr[1:-1] + arr[:-2]) / (h * h)
    out[0] = out[1]
    out[-1] = out[-2]
    return out


@dataclass
class EisenhartVelocities:
    v1: np.ndarray
    u1: np.ndarray
    mask1: np.ndarray
    v2: np.ndarray
    u2: np.ndarray
    mask2: np.ndarray


def eisenhart_velocities(e, eps_floor_frac=1e-8):
    """Conservation-form velocity fields of the lifted flow; the
    s-velocity is proportional to V and collapses to V/m on
    constraint-satisfying fields."""
    units = e.units
    coef = units.hbar / (2.0 * units.mass)
    s_coef = units.hbar / units.mass**2
    grid = e.grid
    h = grid.spacing(0)
    periodic = grid.periodic[0]
    x = grid.axis(0)
    v_pot = np.asarray(e.potential.values(x, 0.0, units), dtype=float)[:, None]
    p = e.period

    dx1 = diff1(e.phi1, h, periodic=periodic, axis=0)
    dx2 = diff1(e.phi2, h, periodic=periodic, axis=0)
    ds1 = spectral_diff_periodic(e.phi1, p, axis=1)
    ds2 = spectral_diff_periodic(e.phi2, p, axis=1)

    def floor_mask(arr):
        scale = np.max(np.abs(arr))
        if scale == 0.0:
            return np.zeros(arr.shape, bool)
        return np.abs(arr) >= eps_floor_frac * scale

    mask1 = floor_mask(e.phi1)
    mask2 = floor_mask(e.phi2)
    with np.errstate(all="ignore"):
        v1 = np.where(mask1, coef * dx2 / np.where(mask1, e.phi1, 1.0), 0.0)
        u1 = np.where(mask1, s_coef * v_pot * ds2 / np.where(mask1, e.phi1, 1.0), 0.0)
        v2 = np.where(mask2, -coef * dx1 / np.where(mask2, e.phi2, 1.0), 0.0)
        u2 = np.where(mask2, -s_coef * v_pot * ds1 / np.where(mask2, e.phi2, 1.0), 0.0)
    return EisenhartVelocities(v1, u1, mask1, v2, u2, mask2)


@dataclass
class EisenhartFlow:
    """Model descriptor selecting the lifted closure for residual checks."""

    potential: object = None
    m_s: int = DEFAULT_S_POINTS
    eps_floor_frac: float = 1e-8

    name = "eisenhart"

    def __post_init__(self):
        if self.potential is None:
            self.potential = ZeroPotential()


def eisenhart_conservation_residual(series, model, window_threshold=1e-6):
    """Residual of the lifted conservation form
    d(phi_a)/dt + d(phi_a v_a)/dx + d(phi_a u_a)/ds per phase and
    interior slice."""
    if len(series.fields) < 3:
        raise ConfigError("residual needs at least three time slices")
    lifted = [lift(f, model.m_s, model.potential) for f in series.fields]
    grid = series.grid
    h = grid.spacing(0)
    periodic = grid.periodic[0]
    dt = series.dt
    p = lifted[0].period
    out = []
    for i in range(1, len(lifted) - 1):
        vel = eisenhart_velocities(lifted[i], model.eps_floor_frac)
        root = np.sqrt(series.fields[i].density())
        window = (root >= window_threshold * root.max())[:, None]
        row = []
        for comp, v, u, mask in (
            ("phi1", vel.v1, vel.u1, vel.mask1),
            ("phi2", vel.v2, vel.u2, vel.mask2),
        ):
            prev = getattr(lifted[i - 1], comp)
            now = getattr(lifted[i], comp)
            nxt = getattr(lifted[i + 1], comp)
            ddt = (nxt - prev) / (2.0 * dt)
            current_x = np.where(mask, now * v, 0.0)
            current_s = np.where(mask, now * u, 0.0)
            div = diff1(current_x, h, periodic=periodic, axis=0)
            div += spectral_diff_periodic(current_s, p, axis=1)
            valid = mask & window & _mask_interior(mask, periodic)
            row.append(float(np.max(np.abs(np.where(valid, ddt + div, 0.0)))))
        out.append(row)
    return np.array(out)


def _mask_interior(mask, periodic_x):
    ok = mask.copy()
    ok &= np.roll(mask, 1, axis=1) & np.roll(mask, -1, axis=1)
    if periodic_x:
        ok &= np.roll(mask, 1, axis=0) & np.roll(mask, -1, axis=0)
    else:
        ok[:2] = False
        ok[-2:] = False
        ok[1:] &= mask[:-1]
        ok[:-1] &= mask[1:]
    return ok


# ---------------------------------------------------------------------------
# Lagrangian propagation on the (x, s) cylinder


@dataclass
class EisenhartBundle:
    """One family of labelled trajectories on the cylinder."""

    phase: int
    x0: np.ndarray  # (n_c,)
    s0: np.ndarray  # (n_c, m) label comb, possibly sheared per column
    phi0: np.ndarray  # (n_c, m)
    times: list
    positions_x: list  # arrays (n_c, m)
    positions_s: list
    period: float
    eps_floor: float = 0.0
    edge_margin_frac: float = 0.1
    status: str = "ok"
    halt_reason: str = None
    halt_time: float = None

    @property
    def time(self):
        return self.times[-1]


class _EisenhartContext:
    def __init__(self, x0, tau, s0, phi0_pair, floors, potential, units, margin_frac):
        self.x0 = x0
        self.h_x = float(x0[1] - x0[0])
        self.tau = tau
        self.h_tau = float(tau[1] - tau[0])
        self.period = s_period(units)
        self.s0 = s0
        self.phi0 = phi0_pair
        self.floors = floors
        self.potential = potential
        self.units = units
        self.margin_frac = margin_frac
        self.coef = units.hbar / (2.0 * units.mass)

    def determinant(self, qx, q4):
        dqx_di = diff1(qx, self.h_x, axis=0)
        dq4_di = diff1(q4, self.h_x, axis=0)
        dqx_dj = diff1(qx, self.h_tau, periodic=True, axis=1)
        dq4_dj = 1.0 + diff1(q4 - self.tau[None, :], self.h_tau, periodic=True, axis=1)
        det = dqx_di * dq4_dj - dqx_dj * dq4_di
        return det, dqx_di, dq4_di

    def charge_state(self, qx, q4, phase):
        if np.any(np.diff(qx, axis=0) <= 0.0):
            raise CrossingDetected(f"phase {phase} sheet lost x-monotonicity")
        det, dqx_di, dq4_di = self.determinant(qx, q4)
        if np.any(det <= 0.0):
            idx = np.unravel_index(int(np.argmin(det)), det.shape)
            raise CrossingDetected(
                f"non-positive determinant {det[idx]:.3g} at label {idx}", index=idx
            )
        recon = self.phi0[phase - 1] / det
        floor = self.floors[phase - 1]
        if np.min(np.abs(recon)) < floor:
            idx = np.unravel_index(int(np.argmin(np.abs(recon))), recon.shape)
            raise SingularDensity(
                f"phase {phase} charge under floor at label {idx}",
                where=float(qx[idx]),
            )
        along_slope = diff1(recon, self.h_x, axis=0) / dqx_di
        tilt = dq4_di / dqx_di
        return {"recon": recon, "slope": along_slope, "tilt": tilt}

    def foreign_eval(self, qx_f, q4_f, state_f, x_eval, s_eval, phase):
        """Value and fixed-s x-slope of the foreign charge at scattered
        (x, s) points: sheet-wise monotone interpolation in x, then a
        periodic spline across the sheets in s.  The along-sheet slope is
        corrected by the sheet tilt to give the true partial derivative."""
        n_c, m = qx_f.shape
        n_e = x_eval.shape[0]
        nodes = np.empty((n_e, m))
        channels = np.empty((n_e, m, 3))
        for j in range(m):
            xj = qx_f[:, j]
            data = np.stack(
                [state_f["recon"][:, j], q4_f[:, j], state_f["slope"][:, j], state_f["tilt"][:, j]],
                axis=1,
            )
            margin = self.margin_frac * (xj[-1] - xj[0])
            xq = clamp_to_range(x_eval, xj[0], xj[-1], margin)
            out = pchip(xj, data)(xq)
            nodes[:, j] = out[:, 1]
            channels[:, j, 0] = out[:, 0]
            channels[:, j, 1] = out[:, 2]
            channels[:, j, 2] = out[:, 3]
        try:
            spline = PeriodicSplineBatch(nodes, channels, self.period)
        except ValueError as exc:
            raise CrossingDetected(f"foreign sheets collided in s: {exc}") from exc
        vals, ders = spline.evaluate(s_eval, derivative=True)
        value = vals[:, 0]
        dphi_ds = ders[:, 0]
        along = vals[:, 1]
        tilt = vals[:, 2]
        floor = self.floors[phase - 1]
        if np.min(np.abs(value)) < floor:
            idx = int(np.argmin(np.abs(value)))
            raise SingularDensity(
                f"foreign charge {phase} under floor at x = {x_eval[idx]:.4g}",
                where=float(x_eval[idx]),
            )
        return value, along - tilt * dphi_ds

    def rhs(self, state):
        qx1, q41, qx2, q42 = state
        st1 = self.charge_state(qx1, q41, 1)
        st2 = self.charge_state(qx2, q42, 2)
        shape = qx1.shape

        val2, slope2 = self.foreign_eval(
            qx2, q42, st2, qx1.ravel(), q41.ravel(), phase=2
        )
        v1 = self.coef * slope2.reshape(shape) / st1["recon"]
        val1, slope1 = self.foreign_eval(
            qx1, q41, st1, qx2.ravel(), q42.ravel(), phase=1
        )
        v2 = -self.coef * slope1.reshape(shape) / st2["recon"]

        u1 = self.potential.values(qx1, 0.0, self.units) / self.units.mass
        u2 = self.potential.values(qx2, 0.0, self.units) / self.units.mass
        return v1, u1, v2, u2

    def rk4(self, state, dt):
        k1 = self.rhs(state)
        s2 = tuple(y + 0.5 * dt * k for y, k in zip(state, k1))
        k2 = self.rhs(s2)
        s3 = tuple(y + 0.5 * dt * k for y, k in zip(state, k2))
        k3 = self.rhs(s3)
        s4 = tuple(y + dt * k for y, k in zip(state, k3))
        k4 = self.rhs(s4)
        return tuple(
            y + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d)
            for y, a, b, c, d in zip(state, k1, k2, k3, k4)
        )

    def verify(self, state):
        qx1, q41, qx2, q42 = state
        self.charge_state(qx1, q41, 1)
        self.charge_state(qx2, q42, 2)

    def extract(self, state, x_eval):
        """Least-squares inversion of the lift across both families'
        s-fibres at the evaluation points; the fit residual is the
        constraint-violation spread."""
        qx1, q41, qx2, q42 = state
        st1 = self.charge_state(qx1, q41, 1)
        st2 = self.charge_state(qx2, q42, 2)
        n_e = x_eval.shape[0]
        ratio = self.units.mass / self.units.hbar

        a11 = np.zeros(n_e)
        a12 = np.zeros(n_e)
        a22 = np.zeros(n_e)
        rhs1 = np.zeros(n_e)
        rhs2 = np.zeros(n_e)
        samples = []
        for phase, qx_f, q4_f, st in ((1, qx1, q41, st1), (2, qx2, q42, st2)):
            m = qx_f.shape[1]
            for j in range(m):
                xj = qx_f[:, j]
                data = np.stack([st["recon"][:, j], q4_f[:, j]], axis=1)
                margin = self.margin_frac * (xj[-1] - xj[0])
                xq = clamp_to_range(x_eval, xj[0], xj[-1], margin)
                out = pchip(xj, data)(xq)
                phi = out[:, 0]
                theta = ratio * out[:, 1]
                c, sn = np.cos(theta), np.sin(theta)
                if phase == 1:
                    row1, row2 = c, -sn
                else:
                    row1, row2 = sn, c
                a11 += row1 * row1
                a12 += row1 * row2
                a22 += row2 * row2
                rhs1 += row1 * phi
                rhs2 += row2 * phi
                samples.append((row1, row2, phi))
        det = a11 * a22 - a12 * a12
        psi1 = (a22 * rhs1 - a12 * rhs2) / det
        psi2 = (a11 * rhs2 - a12 * rhs1) / det
        resid = 0.0
        total = 0.0
        for row1, row2, phi in samples:
            r = phi - (row1 * psi1 + row2 * psi2)
            resid += float(np.sum(r * r))
            total += float(np.sum(phi * phi))
        spread = float(np.sqrt(resid / total)) if total > 0 else float(np.sqrt(resid))
        return psi1, psi2, spread


def init_eisenhart_bundles(f0, potential, m_s, options, s_shift=0.0):
    """Sample both lifted charges on a label comb chosen so every label
    starts at least sin(pi/m_s) of the local envelope away from zero.

    The comb angle is offset by pi/m_s and sheared by the initial phase
    profile; the shear is a unit-Jacobian relabelling, so the carried
    conservation law is unchanged.
    """
    if f0.grid.dimension != 1:
        raise ConfigError("lifted propagation starts from a 1D state")
    if m_s < 8:
        raise ConfigError("need at least 8 fifth-coordinate points")
    units = f0.units
    x = f0.grid.axis(0)
    if options.window is not None:
        lo, hi = float(options.window[0]), float(options.window[1])
    else:
        i0, i1 = envelope_window(f0, 1e-6)
        lo, hi = float(x[i0]), float(x[i1])
    n_c = int(options.n_labels)
    x0 = np.linspace(lo, hi, n_c)

    polar = polar_decompose(f0)
    angle0 = pchip(x, polar.phase_action / units.hbar)(x0)
    psi1 = pchip(x, f0.psi1)(x0)
    psi2 = pchip(x, f0.psi2)(x0)

    p = s_period(units)
    tau = p * np.arange(m_s) / m_s
    comb = (2.0 * np.arange(m_s) + 1.0) * np.pi / m_s  # offset tau angles
    theta = comb[None, :] - angle0[:, None] + units.mass * s_shift / units.hbar
    s0 = (units.hbar / units.mass) * theta

    c, sn = np.cos(theta), np.sin(theta)
    phi0 = (c * psi1[:, None] - sn * psi2[:, None], sn * psi1[:, None] + c * psi2[:, None])

    bundles = []
    floors = []
    for phase in (1, 2):
        samples = phi0[phase - 1]
        floor = options.eps_floor_frac * np.max(np.abs(samples))
        if floor == 0.0 or np.min(np.abs(samples)) < floor:
            idx = np.unravel_index(int(np.argmin(np.abs(samples))), samples.shape)
            raise SingularDensity(
                f"lifted charge {phase} starts under the floor at label {idx}",
                where=float(x0[idx[0]]),
                time=f0.time,
            )
        floors.append(floor)
        bundles.append(
            EisenhartBundle(
                phase=phase,
                x0=x0,
                s0=s0,
                phi0=samples,
                times=[f0.time],
                positions_x=[np.tile(x0[:, None], (1, m_s))],
                positions_s=[s0.copy()],
                period=p,
                eps_floor=floor,
                edge_margin_frac=options.edge_margin_frac,
            )
        )
    ctx = _EisenhartContext(
        x0, tau, s0, phi0, floors, potential, units, options.edge_margin_frac
    )
    return bundles[0], bundles[1], ctx


def propagate_eisenhart(f0, potential, m_s, options, out_grid=None, s_shift=0.0):
    """Lift, advance both families adaptively, and extract the state.

    With V = 0 the fifth coordinate never moves (the update term is
    identically zero) and the run reduces to independent per-sheet free
    flows; with constant V the fifth coordinate advances rigidly, adding
    the corresponding global phase to the extracted state.
    """
    b1, b2, ctx = init_eisenhart_bundles(f0, potential, m_s, options, s_shift)
    state = (
        b1.positions_x[0].copy(),
        b1.positions_s[0].copy(),
        b2.positions_x[0].copy(),
        b2.positions_s[0].copy(),
    )

    diag = Diagnostics()
    times = [f0.time]
    hist = [state]

    def on_accept(y, t_new, dt_used, _err):
        times.append(t_new)
        hist.append(tuple(arr.copy() for arr in y))
        diag.times.append(t_new)
        diag.dt_history.append(dt_used)
        diag.drift_history.append(_drift(ctx, y))
        probe = _probe_points(ctx, y)
        if probe is not None:
            _, _, spread = ctx.extract(y, probe)
            diag.spread_history.append(spread)

    state, _t, halt, rejected = adaptive_rk4_drive(
        state, f0.time, options, ctx.rk4, ctx.verify, on_accept
    )
    diag.rejected_steps = rejected
    diag.halt = halt
    status = "ok" if halt is None else "halted"

    bundles = []
    for bundle, (ix, is_) in ((b1, (0, 1)), (b2, (2, 3))):
        bundles.append(
            EisenhartBundle(
                phase=bundle.phase,
                x0=bundle.x0,
                s0=bundle.s0,
                phi0=bundle.phi0,
                times=times,
                positions_x=[h[ix] for h in hist],
                positions_s=[h[is_] for h in hist],
                period=bundle.period,
                eps_floor=bundle.eps_floor,
                edge_margin_frac=bundle.edge_margin_frac,
                status=status,
                halt_reason=None if halt is None else halt["reason"],
                halt_time=None if halt is None else halt["time"],
            )
        )
    b1, b2 = bundles

    qx1, _, qx2, _ = state
    lo = max(qx1.min(axis=0).max(), qx2.min(axis=0).max())
    hi = min(qx1.max(axis=0).min(), qx2.max(axis=0).min())
    if out_grid is None:
        out_grid = grid_1d(lo, hi, len(b1.x0))
    xg = out_grid.axis(0)
    psi1, psi2, spread = ctx.extract(state, xg)
    diag.spread_history.append(spread)
    final = RealPairField(out_grid, f0.units, psi1, psi2, times[-1])
    return final, (b1, b2), diag


def _drift(ctx, state):
    qx1, q41, qx2, q42 = state
    worst = 0.0
    for phase, qx, q4 in ((1, qx1, q41), (2, qx2, q42)):
        det, _, _ = ctx.determinant(qx, q4)
        phi0 = ctx.phi0[phase - 1]
        recon = phi0 / det
        worst = max(worst, float(np.max(np.abs(recon * det - phi0)) / np.max(np.abs(phi0))))
    return worst


def _probe_points(ctx, state):
    qx1, _, qx2, _ = state
    lo = max(qx1.min(axis=0).max(), qx2.min(axis=0).max())
    hi = min(qx1.max(axis=0).min(), qx2.max(axis=0).min())
    span = hi - lo
    if span <= 0:
        return None
    keep = (ctx.x0 >= lo + 0.02 * span) & (ctx.x0 <= hi - 0.02 * span)
    if not np.any(keep):
        return None
    return ctx.x0[keep]


def eisenhart_determinant(bundle, step=-1):
    """Re-measure the 2x2 label-to-position determinant from recorded positions."""
    units_free = bundle.period / (2.0 * np.pi)  # hbar/mass
    tau = bundle.period * np.arange(bundle.s0.shape[1]) / bundle.s0.shape[1]
    h_x = float(bundle.x0[1] - bundle.x0[0])
    h_tau = float(tau[1] - tau[0])
    qx = bundle.positions_x[step]
    q4 = bundle.positions_s[step]
    dqx_di = diff1(qx, h_x, axis=0)
    dq4_di = diff1(q4, h_x, axis=0)
    dqx_dj = diff1(qx, h_tau, periodic=True, axis=1)
    dq4_dj = 1.0 + diff1(q4 - tau[None, :], h_tau, periodic=True, axis=1)
    det = dqx_di * dq4_dj - dqx_dj * dq4_di
    if np.any(det <= 0):
        idx = np.unravel_index(int(np.argmin(det)), det.shape)
        raise CrossingDetected(f"non-positive determinant at label {idx}", index=idx)
    return det
