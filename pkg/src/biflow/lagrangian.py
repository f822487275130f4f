"""Self-contained propagation of the two coupled trajectory families from
the initial wavefunction alone, in one spatial dimension.

Each family carries one real component of the wavefunction as a conserved
charge: the component at time t is the initial sample divided by the
measured label-to-position stretch factor.  The two families are coupled
because each phase's velocity needs the other charge's value and slope at
its own positions, which is obtained by monotone interpolation over the
other family's current positions.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, CrossingDetected, OutOfDomain, SingularDensity
from .fields import RealPairField, envelope_window
from .grids import grid_1d
from .interpolation import clamp_to_range, pchip
from .numerics import diff1

PROPAGATION_EPS_FLOOR_FRAC = 1e-6


@dataclass
class PropagationOptions:
    dt_init: float = 1e-3
    dt_min: float = 1e-9
    tolerance: float = 1e-6  # step-doubling position tolerance; inf = fixed dt
    eps_floor_frac: float = PROPAGATION_EPS_FLOOR_FRAC
    max_time: float = 0.2
    n_labels: int = 512
    window: tuple = None  # (lo, hi); None derives it from the envelope
    edge_margin_frac: float = 0.1  # foreign-lookup overshoot allowance; 0 = strict
    max_steps: int = 200_000

    def __post_init__(self):
        if not (self.dt_init > 0 and self.dt_min > 0 and self.dt_min <= self.dt_init):
            raise ConfigError("need 0 < dt_min <= dt_init")
        if not (self.tolerance > 0 and self.max_time > 0 and self.eps_floor_frac > 0):
            raise ConfigError("tolerance, max_time and eps_floor_frac must be positive")


@dataclass
class TrajectoryBundle:
    """One family of labelled trajectories and its carried charge."""

    phase: int
    labels: np.ndarray
    psi0: np.ndarray
    times: list
    positions: list  # arrays aligned with times
    periodic: bool = False
    period: float = None
    eps_floor: float = 0.0
    edge_margin_frac: float = 0.1
    status: str = "ok"
    halt_reason: str = None
    halt_time: float = None

    @property
    def time(self):
        return self.times[-1]

    @property
    def current_positions(self):
        return self.positions[-1]

    def label_spacing(self):
        return float(self.labels[1] - self.labels[0])


@dataclass
class Diagnostics:
    times: list = field(default_factory=list)
    dt_history: list = field(default_factory=list)
    drift_history: list = field(default_factory=list)
    spread_history: list = field(default_factory=list)
    rejected_steps: int = 0
    halt: dict = None

    def as_dict(self):
        return {
            "times": list(self.times),
            "dt_history": list(self.dt_history),
            "drift_history": list(self.drift_history),
            "spread_history": list(self.spread_history),
            "rejected_steps": self.rejected_steps,
            "halt": self.halt,
        }


# ---------------------------------------------------------------------------
# Bundle construction and per-bundle measurements


def init_bundles(f0, options):
    """Label both families uniformly over the active window and sample the
    initial charges there.  Either charge crossing the floor inside the
    window refuses to start."""
    if f0.grid.dimension != 1:
        raise ConfigError("self-contained propagation is one-dimensional")
    x = f0.grid.axis(0)
    periodic = bool(f0.grid.periodic[0]) and options.window is None
    if options.window is not None:
        lo, hi = float(options.window[0]), float(options.window[1])
        if lo >= hi:
            raise ConfigError("window must have lo < hi")
    else:
        i0, i1 = envelope_window(f0, 1e-6)
        lo, hi = float(x[i0]), float(x[i1])

    n = int(options.n_labels)
    if n < 8:
        raise ConfigError("need at least 8 labels")
    if periodic:
        period = f0.grid.period(0)
        labels = lo + period * np.arange(n) / n
    else:
        period = None
        labels = np.linspace(lo, hi, n)

    bundles = []
    for phase in (1, 2):
        comp = f0.component(phase)
        if periodic:
            period_grid = f0.grid.period(0)
            x_ext = np.concatenate([x - period_grid, x, x + period_grid])
            samples = pchip(x_ext, np.tile(comp, 3))(labels)
        else:
            samples = pchip(x, comp)(labels)
        floor = options.eps_floor_frac * np.max(np.abs(samples))
        if floor == 0.0 or np.min(np.abs(samples)) < floor:
            where = labels[int(np.argmin(np.abs(samples)))]
            raise SingularDensity(
                f"component {phase} crosses the floor inside the window near x={where:.4g}",
                where=float(where),
                time=f0.time,
            )
        bundles.append(
            TrajectoryBundle(
                phase=phase,
                labels=labels,
                psi0=samples,
                times=[f0.time],
                positions=[labels.copy()],
                periodic=periodic,
                period=period,
                eps_floor=floor,
                edge_margin_frac=options.edge_margin_frac,
            )
        )
    return bundles[0], bundles[1]


def jacobian_of(positions, labels, periodic=False):
    """Label-to-position stretch measured by central differences
    (second-order one-sided at the two end labels)."""
    h = labels[1] - labels[0]
    if periodic:
        jac = 1.0 + diff1(positions - labels, h, periodic=True)
    else:
        jac = diff1(positions, h, periodic=False)
    if np.any(jac <= 0.0):
        idx = int(np.argmin(jac))
        raise CrossingDetected(
            f"non-positive stretch {jac[idx]:.3g} at label index {idx}", index=idx
        )
    return jac


def jacobian(bundle, step=-1):
    return jacobian_of(bundle.positions[step], bundle.labels, bundle.periodic)


def reconstruct_density(bundle, step=-1):
    """Carried charge at the current positions: initial sample divided by
    the measured stretch."""
    return bundle.psi0 / jacobian(bundle, step)


# ---------------------------------------------------------------------------
# Coupled right-hand side


class _TwoPhaseContext:
    def __init__(self, b1, b2, units):
        if b1.periodic != b2.periodic:
            raise ConfigError("bundles disagree on periodicity")
        self.labels = b1.labels
        self.psi0 = (b1.psi0, b2.psi0)
        self.floors = (b1.eps_floor, b2.eps_floor)
        self.periodic = b1.periodic
        self.period = b1.period
        self.margin_frac = b1.edge_margin_frac
        self.coef = units.hbar / (2.0 * units.mass)
        self.h_label = b1.label_spacing()

    def charge_state(self, positions, phase):
        """Reconstructed charge and its x-slope along one family."""
        jac = jacobian_of(positions, self.labels, self.periodic)
        recon = self.psi0[phase - 1] / jac
        floor = self.floors[phase - 1]
        if np.min(np.abs(recon)) < floor:
            idx = int(np.argmin(np.abs(recon)))
            raise SingularDensity(
                f"phase {phase} charge {recon[idx]:.3g} under floor at label {idx}",
                where=float(positions[idx]),
            )
        slope = diff1(recon, self.h_label, periodic=self.periodic) / jac
        return recon, slope

    def foreign_eval(self, positions, recon, slope, queries):
        """Value and x-slope of a foreign charge at the query points,
        interpolated monotonically over that family's positions."""
        channels = np.stack([recon, slope], axis=1)
        if self.periodic:
            lo = positions[0]
            wrapped = lo + np.mod(queries - lo, self.period)
            nodes = np.concatenate([positions - self.period, positions, positions + self.period])
            data = np.concatenate([channels, channels, channels], axis=0)
            out = pchip(nodes, data)(wrapped)
        else:
            margin = self.margin_frac * (positions[-1] - positions[0])
            q = clamp_to_range(queries, positions[0], positions[-1], margin)
            out = pchip(positions, channels)(q)
        return out[:, 0], out[:, 1]

    def rhs(self, q1, q2):
        recon1, slope1 = self.charge_state(q1, 1)
        recon2, slope2 = self.charge_state(q2, 2)
        val2_at_1, slope2_at_1 = self.foreign_eval(q2, recon2, slope2, q1)
        val1_at_2, slope1_at_2 = self.foreign_eval(q1, recon1, slope1, q2)
        for phase, val, positions in ((2, val2_at_1, q1), (1, val1_at_2, q2)):
            floor = self.floors[phase - 1]
            if np.min(np.abs(val)) < floor:
                idx = int(np.argmin(np.abs(val)))
                raise SingularDensity(
                    f"foreign charge {phase} = {val[idx]:.3g} under floor "
                    f"at x = {positions[idx]:.4g}",
                    where=float(positions[idx]),
                )
        v1 = self.coef * slope2_at_1 / recon1
        v2 = -self.coef * slope1_at_2 / recon2
        return v1, v2

    def rk4(self, q1, q2, dt):
        k1a, k1b = self.rhs(q1, q2)
        k2a, k2b = self.rhs(q1 + 0.5 * dt * k1a, q2 + 0.5 * dt * k1b)
        k3a, k3b = self.rhs(q1 + 0.5 * dt * k2a, q2 + 0.5 * dt * k2b)
        k4a, k4b = self.rhs(q1 + dt * k3a, q2 + dt * k3b)
        new1 = q1 + dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        new2 = q2 + dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        return new1, new2

    def verify(self, q1, q2):
        if np.any(np.diff(q1) <= 0) or np.any(np.diff(q2) <= 0):
            raise CrossingDetected("positions lost monotonicity")
        self.charge_state(q1, 1)
        self.charge_state(q2, 2)


def two_phase_velocities(b1, b2, units):
    """Instantaneous phase velocities at the bundles' current positions."""
    ctx = _TwoPhaseContext(b1, b2, units)
    return ctx.rhs(b1.current_positions, b2.current_positions)


def step_two_phase(b1, b2, dt, units):
    """One classical Runge-Kutta step of the coupled families.

    At every stage both stretches and reconstructed charges are refreshed
    at the stage positions, each family's charge is re-interpolated over
    its positions, and the foreign value and slope are read at the
    evaluating family's points.  Raises instead of returning a partial
    update; the adaptive driver reacts by halving dt.
    """
    if b1.time != b2.time:
        raise ConfigError("bundles are not synchronized in time")
    if b1.status != "ok" or b2.status != "ok":
        raise ConfigError("cannot step a halted bundle")
    ctx = _TwoPhaseContext(b1, b2, units)
    new1, new2 = ctx.rk4(b1.current_positions, b2.current_positions, dt)
    ctx.verify(new1, new2)
    t_new = b1.time + dt
    out = []
    for bundle, pos in ((b1, new1), (b2, new2)):
        out.append(
            TrajectoryBundle(
                phase=bundle.phase,
                labels=bundle.labels,
                psi0=bundle.psi0,
                times=bundle.times + [t_new],
                positions=bundle.positions + [pos],
                periodic=bundle.periodic,
                period=bundle.period,
                eps_floor=bundle.eps_floor,
                edge_margin_frac=bundle.edge_margin_frac,
            )
        )
    return out[0], out[1]


# ---------------------------------------------------------------------------
# Assembly and the adaptive driver


def assemble_wavefunction(b1, b2, grid, units, step=-1):
    """Resample both reconstructed charges from their positions onto a
    grid lying inside both coverages."""
    if grid.dimension != 1:
        raise ConfigError("assembly grid must be one-dimensional")
    xq = grid.axis(0)
    comps = []
    for bundle in (b1, b2):
        recon = reconstruct_density(bundle, step)
        positions = bundle.positions[step]
        if bundle.periodic:
            lo = positions[0]
            nodes = np.concatenate(
                [positions - bundle.period, positions, positions + bundle.period]
            )
            data = np.tile(recon, 3)
            comps.append(pchip(nodes, data)(lo + np.mod(xq - lo, bundle.period)))
        else:
            if xq[0] < positions[0] - 1e-12 or xq[-1] > positions[-1] + 1e-12:
                raise OutOfDomain(
                    f"assembly grid [{xq[0]:.4g}, {xq[-1]:.4g}] exceeds phase-"
                    f"{bundle.phase} coverage [{positions[0]:.4g}, {positions[-1]:.4g}]"
                )
            comps.append(pchip(positions, recon)(np.clip(xq, positions[0], positions[-1])))
    return RealPairField(grid, units, comps[0], comps[1], b1.times[step])


def measured_drift(bundle, step=-1):
    """Deviation of charge * stretch from the initial charge, with the
    stretch re-measured from the recorded positions."""
    jac = jacobian(bundle, step)
    recon = bundle.psi0 / jac
    return float(np.max(np.abs(recon * jac - bundle.psi0)) / np.max(np.abs(bundle.psi0)))


def propagate(f0, options, out_grid=None):
    """Adaptive two-family propagation from the initial wavefunction alone.

    Step-doubling error control: a full step is compared against two half
    steps and accepted when the position discrepancy stays below the
    tolerance (an infinite tolerance gives fixed-step integration).  Any
    singularity, crossing, or failed foreign lookup halves dt; once dt
    falls under dt_min the run is halted with the reason recorded.
    Halting is a value, not an exception.
    """
    from .stepping import adaptive_rk4_drive

    b1, b2 = init_bundles(f0, options)
    ctx = _TwoPhaseContext(b1, b2, f0.units)
    state = (b1.current_positions.copy(), b2.current_positions.copy())

    diag = Diagnostics()
    times = [f0.time]
    hist1 = [state[0].copy()]
    hist2 = [state[1].copy()]

    def rk4(y, dt):
        return ctx.rk4(y[0], y[1], dt)

    def verify(y):
        ctx.verify(y[0], y[1])

    def on_accept(y, t_new, dt_used, _err):
        times.append(t_new)
        hist1.append(y[0].copy())
        hist2.append(y[1].copy())
        diag.times.append(t_new)
        diag.dt_history.append(dt_used)
        diag.drift_history.append(max(_drift_of(y[0], b1), _drift_of(y[1], b2)))

    state, _t, halt, rejected = adaptive_rk4_drive(
        state, f0.time, options, rk4, verify, on_accept
    )
    q1, q2 = state
    diag.rejected_steps = rejected
    diag.halt = halt
    status = "ok" if halt is None else "halted"
    out_bundles = []
    for bundle, hist in ((b1, hist1), (b2, hist2)):
        out_bundles.append(
            TrajectoryBundle(
                phase=bundle.phase,
                labels=bundle.labels,
                psi0=bundle.psi0,
                times=times,
                positions=hist,
                periodic=bundle.periodic,
                period=bundle.period,
                eps_floor=bundle.eps_floor,
                edge_margin_frac=bundle.edge_margin_frac,
                status=status,
                halt_reason=None if halt is None else halt["reason"],
                halt_time=None if halt is None else halt["time"],
            )
        )
    b1, b2 = out_bundles

    if out_grid is None:
        lo = max(q1[0], q2[0])
        hi = min(q1[-1], q2[-1])
        out_grid = grid_1d(lo, hi, len(b1.labels))
    final = assemble_wavefunction(b1, b2, out_grid, f0.units)
    return final, (b1, b2), diag


def _drift_of(positions, bundle):
    jac = jacobian_of(positions, bundle.labels, bundle.periodic)
    recon = bundle.psi0 / jac
    return float(np.max(np.abs(recon * jac - bundle.psi0)) / np.max(np.abs(bundle.psi0)))
