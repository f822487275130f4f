"""Velocity and density closures: every flow evaluator is a pure function
mapping sampled fields to per-phase (density, velocity) pairs.

Velocities divide by carried charge densities, so every evaluator masks
points where the relevant density falls below a floor instead of failing;
masked points carry no finite-value guarantee.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BranchAmbiguity, ConfigError
from .fields import RealPairField, polar_decompose
from .grids import grid_2d
from .numerics import diff1

DEFAULT_EPS_FLOOR_FRAC = 1e-8
POLAR_SINGULAR_TOL = 1e-6


@dataclass
class VelocityPair:
    """Per-phase velocity arrays with component axis first, plus a
    defined-mask per phase (True where the value is meaningful)."""

    v1: np.ndarray
    v2: np.ndarray
    mask1: np.ndarray
    mask2: np.ndarray

    def joint_mask(self):
        return self.mask1 & self.mask2


@dataclass
class PhaseFlow:
    """One conserved charge and the velocity transporting it."""

    density: np.ndarray
    velocity: np.ndarray  # (d, *shape)
    mask: np.ndarray


def gradient(values, grid):
    """Stacked central-difference gradient, shape (d, *grid.shape)."""
    comps = [
        diff1(values, grid.spacing(axis), periodic=grid.periodic[axis], axis=axis)
        for axis in range(grid.dimension)
    ]
    return np.stack(comps, axis=0)


def _floor_mask(values, eps_frac):
    scale = np.max(np.abs(values))
    if scale == 0.0:
        return np.zeros(values.shape, dtype=bool)
    return np.abs(values) >= eps_frac * scale


def _safe_divide(num, den, mask):
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=mask)
    return out


# ---------------------------------------------------------------------------
# Core two-charge closure and its polar form


def velocities_standard(f, eps_floor_frac=DEFAULT_EPS_FLOOR_FRAC):
    """v1 = (hbar/2m) grad(psi2)/psi1 and v2 = -(hbar/2m) grad(psi1)/psi2,
    gradients by central differences (one-sided at non-periodic edges)."""
    coef = f.units.hbar / (2.0 * f.units.mass)
    g1 = gradient(f.psi1, f.grid)
    g2 = gradient(f.psi2, f.grid)
    mask1 = _floor_mask(f.psi1, eps_floor_frac)
    mask2 = _floor_mask(f.psi2, eps_floor_frac)
    v1 = coef * _safe_divide(g2, f.psi1[None], mask1[None])
    v2 = -coef * _safe_divide(g1, f.psi2[None], mask2[None])
    return VelocityPair(v1, v2, mask1, mask2)


def velocities_polar(p, eps_floor_frac=DEFAULT_EPS_FLOOR_FRAC):
    """Polar form of the closure.  Points where S/hbar sits within
    POLAR_SINGULAR_TOL of a multiple of pi/2 are masked (tan or cot
    singular there), as are points with undefined phase."""
    units = p.units
    grid = p.grid
    angle = p.phase_action / units.hbar
    grad_s = gradient(p.phase_action, grid)
    rho_ok = ~p.undefined
    log_rho = np.zeros_like(p.rho)
    np.log(p.rho, out=log_rho, where=rho_ok)
    grad_log_rho = gradient(log_rho, grid)

    near_half_pi = np.abs(angle / (np.pi / 2.0) - np.round(angle / (np.pi / 2.0))) * (
        np.pi / 2.0
    ) < POLAR_SINGULAR_TOL
    base_mask = rho_ok & ~near_half_pi
    # A singular log-density stencil also poisons neighbours' gradients;
    # keep it simple and require the full stencil defined.
    base_mask &= _stencil_ok(rho_ok, grid)

    mean_term = grad_s / (2.0 * units.mass)
    quarter = units.hbar / (4.0 * units.mass)
    with np.errstate(all="ignore"):
        v1 = mean_term + quarter * np.tan(angle)[None] * grad_log_rho
        v2 = mean_term - quarter * (1.0 / np.tan(angle))[None] * grad_log_rho
    return VelocityPair(v1, v2, base_mask, base_mask)


def _stencil_ok(mask, grid):
    ok = mask.copy()
    for axis in range(grid.dimension):
        if grid.periodic[axis]:
            ok &= np.roll(mask, 1, axis=axis) & np.roll(mask, -1, axis=axis)
        else:
            shifted_fwd = np.ones_like(mask)
            shifted_bwd = np.ones_like(mask)
            sl_f = [slice(None)] * mask.ndim
            sl_b = [slice(None)] * mask.ndim
            sl_f[axis] = slice(None, -1)
            sl_b[axis] = slice(1, None)
            shifted_fwd[tuple(sl_f)] = mask[tuple(sl_b)]
            shifted_bwd[tuple(sl_b)] = mask[tuple(sl_f)]
            ok &= shifted_fwd & shifted_bwd
    return ok


def mean_identity_residual(f, velocities=None, eps_floor_frac=DEFAULT_EPS_FLOOR_FRAC):
    """Residual of the weighted-mean identity
    cos^2(S/hbar) v1 + sin^2(S/hbar) v2 = grad(S)/2m.

    grad(S) is evaluated in the current form
    hbar (psi1 grad psi2 - psi2 grad psi1)/rho with the same stencil as
    the velocities, so the identity cancels algebraically and the
    residual detects inconsistent velocity fields rather than stencil
    mismatch.  Returns (residual, mask): max-norm over components on the
    joint unmasked set.
    """
    vp = velocities if velocities is not None else velocities_standard(f, eps_floor_frac)
    rho = f.density()
    rho_mask = _floor_mask(rho, eps_floor_frac**2)
    g1 = gradient(f.psi1, f.grid)
    g2 = gradient(f.psi2, f.grid)
    grad_s = f.units.hbar * _safe_divide(
        f.psi1[None] * g2 - f.psi2[None] * g1, rho[None], rho_mask[None]
    )
    w1 = _safe_divide(f.psi1**2, rho, rho_mask)
    w2 = _safe_divide(f.psi2**2, rho, rho_mask)
    res = w1[None] * vp.v1 + w2[None] * vp.v2 - grad_s / (2.0 * f.units.mass)
    mask = vp.joint_mask() & rho_mask
    return np.max(np.abs(res), axis=0), mask


def one_phase_criterion(f, tol, eps_floor_frac=DEFAULT_EPS_FLOOR_FRAC):
    """True when the two phase velocities coincide to within tol on the
    joint unmasked set; otherwise False plus a maximizing witness point."""
    vp = velocities_standard(f, eps_floor_frac)
    mask = vp.joint_mask()
    if not np.any(mask):
        raise ConfigError("no points where both velocities are defined")
    diff = np.max(np.abs(vp.v1 - vp.v2), axis=0)
    diff = np.where(mask, diff, -np.inf)
    worst_flat = int(np.argmax(diff))
    worst = np.unravel_index(worst_flat, diff.shape)
    value = float(diff[worst])
    if value < tol:
        return True, None
    coords = tuple(float(f.grid.axis(a)[worst[a]]) for a in range(f.grid.dimension))
    return False, {"point": coords, "gap": value}


# ---------------------------------------------------------------------------
# Superposition rule


def superposition_velocity(f, g, eps_floor_frac=DEFAULT_EPS_FLOOR_FRAC):
    """Velocities of the sum state as density-weighted averages of the
    constituents' velocities: no interference terms appear."""
    if f.grid != g.grid:
        raise ConfigError("superposition requires both fields on the same grid")
    vf = velocities_standard(f, eps_floor_frac)
    vg = velocities_standard(g, eps_floor_frac)
    out_v = []
    out_m = []
    for phase, (va, vb) in enumerate(((vf.v1, vg.v1), (vf.v2, vg.v2)), start=1):
        wa = f.component(phase)
        wb = g.component(phase)
        den = wa + wb
        mask = _floor_mask(den, eps_floor_frac)
        mask &= (vf.mask1 if phase == 1 else vf.mask2)
        mask &= (vg.mask1 if phase == 1 else vg.mask2)
        v = _safe_divide(wa[None] * va + wb[None] * vb, den[None], mask[None])
        out_v.append(v)
        out_m.append(mask)
    return VelocityPair(out_v[0], out_v[1], out_m[0], out_m[1])


# ---------------------------------------------------------------------------
# Product states in configuration space


def product_field(psi, phi):
    """Two-body field for a product state on the tensor grid."""
    if psi.grid.dimension != 1 or phi.grid.dimension != 1:
        raise ConfigError("product states are built from two 1D factors")
    if psi.units != phi.units:
        raise ConfigError("factor states must share one unit system")
    grid = grid_2d(
        (psi.grid.x_min[0], phi.grid.x_min[0]),
        (psi.grid.x_max[0], phi.grid.x_max[0]),
        (psi.grid.n[0], phi.grid.n[0]),
        (psi.grid.periodic[0], phi.grid.periodic[0]),
    )
    a1, a2 = psi.psi1[:, None], psi.psi2[:, None]
    b1, b2 = phi.psi1[None, :], phi.psi2[None, :]
    total1 = a1 * b1 - a2 * b2
    total2 = a1 * b2 + a2 * b1
    return RealPairField(grid, psi.units, total1, total2, psi.time)


def product_state_velocities(
    psi, phi, eps_floor_frac=DEFAULT_EPS_FLOOR_FRAC, all_components=False
):
    """Configuration-space velocities of a product state and the gap
    between the full first-axis velocity and the single-body formula
    evaluated on the first factor alone.

    The gap is reported for the first component only unless
    all_components is set; one scalar witness suffices for the
    inequality it quantifies.
    """
    total = product_field(psi, phi)
    vp = velocities_standard(total, eps_floor_frac)

    coef = psi.units.hbar / (2.0 * psi.units.mass)
    single_mask = _floor_mask(psi.psi1, eps_floor_frac)
    single = coef * _safe_divide(
        diff1(psi.psi2, psi.grid.spacing(0), periodic=psi.grid.periodic[0]),
        psi.psi1,
        single_mask,
    )
    gap1 = np.abs(vp.v1[0] - single[:, None])
    gap_mask = vp.mask1 & single_mask[:, None]
    gap1 = np.where(gap_mask, gap1, np.nan)
    if not all_components:
        return vp, gap1

    mask2 = _floor_mask(phi.psi1, eps_floor_frac)
    single2 = coef * _safe_divide(
        diff1(phi.psi2, phi.grid.spacing(0), periodic=phi.grid.periodic[0]),
        phi.psi1,
        mask2,
    )
    gap2 = np.abs(vp.v1[1] - single2[None, :])
    gap2 = np.where(vp.mask1 & mask2[None, :], gap2, np.nan)
    return vp, (gap1, gap2)


# ---------------------------------------------------------------------------
# Alternative closures


def velocities_spin_augmented(f, w1, w2, eps_floor_frac=DEFAULT_EPS_FLOOR_FRAC):
    """Standard closure plus the divergence-free current
    grad(psi_a) x w_a carried by each charge.  The added term lives in
    the plane, so the field must be 2D; in 1D it vanishes identically.
    """
    if f.grid.dimension != 2:
        raise ConfigError(
            "spin-augmented velocities need a 2D grid: the cross-product "
            "current has no in-plane part in 1D (it vanishes identically)"
        )
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    for w in (w1, w2):
        if w.shape != (3,):
            raise ConfigError("augmentation vectors must have three components")
        if w[0] != 0.0 or w[1] != 0.0:
            raise ConfigError("augmentation vectors may only have an out-of-plane component")
    vp = velocities_standard(f, eps_floor_frac)
    for phase, w in ((1, w1), (2, w2)):
        comp = f.component(phase)
        g = gradient(comp, f.grid)
        # (grad psi x w)_inplane = (w_z * d2 psi, -w_z * d1 psi)
        added = np.stack([w[2] * g[1], -w[2] * g[0]], axis=0)
        mask = vp.mask1 if phase == 1 else vp.mask2
        term = _safe_divide(added, comp[None], mask[None])
        if phase == 1:
            vp.v1 = vp.v1 + term
        else:
            vp.v2 = vp.v2 + term
    return vp


def spin_current(f, phase, w):
    """The added divergence-free current grad(psi_a) x w_a (in-plane)."""
    w = np.asarray(w, dtype=float)
    g = gradient(f.component(phase), f.grid)
    return np.stack([w[2] * g[1], -w[2] * g[0]], axis=0)


def hybrid_densities(f):
    """Charge pair of the hybrid closure: rho1 = psi1, rho2 = psi1^2 + psi2^2."""
    return f.psi1.copy(), f.density()


def hybrid_branch(f, eps_floor_frac=DEFAULT_EPS_FLOOR_FRAC, ambiguity_cells=4):
    """Sign branch of sqrt(rho2 - rho1^2), tracked by continuity in x.

    Flips are localized to cells where rho2 - rho1^2 touches zero; in
    between the sign is constant.  An interior zero run longer than
    ambiguity_cells cannot be bridged reliably and raises
    BranchAmbiguity.
    """
    if f.grid.dimension != 1:
        raise ConfigError("branch tracking is one-dimensional")
    rho1, rho2 = hybrid_densities(f)
    r = np.maximum(rho2 - rho1**2, 0.0)
    root = np.sqrt(r)
    scale = root.max()
    sign = np.ones_like(root)
    if scale == 0.0:
        return sign, root  # identically real state: any branch, w = 0
    zero = root < eps_floor_frac * scale
    segments = _segments(~zero)
    if not segments:
        return sign, root
    current = 1.0
    prev_end = None
    for start, end in segments:
        if prev_end is not None:
            gap = start - prev_end
            if gap > ambiguity_cells:
                raise BranchAmbiguity(
                    f"zero run of {gap} cells starting at index {prev_end}: "
                    "sign branch cannot be continued"
                )
            # Continue the smooth branch across the touch: extrapolate the
            # signed values from the left and pick the closer sign.
            w_tail = current * root[prev_end - 2 : prev_end]
            slope = w_tail[1] - w_tail[0]
            predicted = w_tail[1] + slope * (start + 1 - (prev_end - 1))
            target = root[min(start + 1, end - 1)]
            if abs(predicted - (-current) * target) < abs(predicted - current * target):
                current = -current
        sign[start:end] = current
        prev_end = end
    return sign, root


def velocities_dbb_hybrid(f, eps_floor_frac=DEFAULT_EPS_FLOOR_FRAC, ambiguity_cells=4):
    """Hybrid closure whose second velocity is the guidance velocity
    grad(S)/m.  Returns the velocity pair and the tracked sign branch."""
    sign, root = hybrid_branch(f, eps_floor_frac, ambiguity_cells)
    rho1, _ = hybrid_densities(f)
    w = sign * root
    grid = f.grid
    h = grid.spacing(0)
    periodic = grid.periodic[0]
    coef = f.units.hbar / (2.0 * f.units.mass)

    mask1 = _floor_mask(rho1, eps_floor_frac)
    v1 = coef * _safe_divide(diff1(w, h, periodic), rho1, mask1)

    with np.errstate(all="ignore"):
        theta = np.arctan(np.where(mask1, w / np.where(mask1, rho1, 1.0), 0.0))
    mask2 = mask1 & _stencil_ok(mask1, grid)
    v2 = (f.units.hbar / f.units.mass) * diff1(theta, h, periodic)
    v2 = np.where(mask2, v2, 0.0)
    return VelocityPair(v1[None], v2[None], mask1, mask2), sign


def velocities_linear_combo(f, alpha, beta, eps_floor_frac=DEFAULT_EPS_FLOOR_FRAC):
    """Closure for the mixed charges rho1 = a psi1 + b psi2 and
    rho2 = a psi1 - b psi2; returns (velocities, rho1, rho2)."""
    if alpha == 0.0 or beta == 0.0:
        raise ConfigError("linear-combo coefficients must be nonzero")
    rho1 = alpha * f.psi1 + beta * f.psi2
    rho2 = alpha * f.psi1 - beta * f.psi2
    gamma = (alpha**2 - beta**2) / (alpha * beta)
    delta = (alpha**2 + beta**2) / (alpha * beta)
    g1 = gradient(rho1, f.grid)
    g2 = gradient(rho2, f.grid)
    coef = f.units.hbar / (4.0 * f.units.mass)
    mask1 = _floor_mask(rho1, eps_floor_frac)
    mask2 = _floor_mask(rho2, eps_floor_frac)
    v1 = coef * _safe_divide(gamma * g1 - delta * g2, rho1[None], mask1[None])
    v2 = coef * _safe_divide(delta * g1 - gamma * g2, rho2[None], mask2[None])
    return VelocityPair(v1, v2, mask1, mask2), rho1, rho2


def linear_combo_inverse(rho1, rho2, alpha, beta):
    """Exact inverse of the linear charge mixing."""
    if alpha == 0.0 or beta == 0.0:
        raise ConfigError("linear-combo coefficients must be nonzero")
    return (rho1 + rho2) / (2.0 * alpha), (rho1 - rho2) / (2.0 * beta)


def _segments(keep):
    """Contiguous True runs as (start, end) half-open index pairs."""
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        return []
    breaks = np.nonzero(np.diff(idx) > 1)[0]
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    ends = np.concatenate([idx[breaks] + 1, [idx[-1] + 1]])
    return list(zip(starts.tolist(), ends.tolist()))


# ---------------------------------------------------------------------------
# Model descriptors (selectable closures for tracing and residual checks)


@dataclass
class FlowModel:
    """Base descriptor: maps a field to its per-phase conserved flows."""

    eps_floor_frac: float = DEFAULT_EPS_FLOOR_FRAC

    name = "standard"

    def velocity_pair(self, f):
        return velocities_standard(f, self.eps_floor_frac)

    def phase_flows(self, f):
        vp = self.velocity_pair(f)
        densities = self.phase_densities(f)
        return [
            PhaseFlow(densities[0], vp.v1, vp.mask1),
            PhaseFlow(densities[1], vp.v2, vp.mask2),
        ]

    def phase_densities(self, f):
        return [f.psi1, f.psi2]


class StandardFlow(FlowModel):
    pass


class PolarFlow(FlowModel):
    name = "polar"

    def velocity_pair(self, f):
        return velocities_polar(polar_decompose(f), self.eps_floor_frac)


@dataclass
class SpinAugmentedFlow(FlowModel):
    w1: tuple = (0.0, 0.0, 0.0)
    w2: tuple = (0.0, 0.0, 0.0)

    name = "spin_augmented"

    def velocity_pair(self, f):
        return velocities_spin_augmented(f, self.w1, self.w2, self.eps_floor_frac)


class DBBHybridFlow(FlowModel):
    name = "dbb_hybrid"

    def velocity_pair(self, f):
        vp, _ = velocities_dbb_hybrid(f, self.eps_floor_frac)
        return vp

    def phase_densities(self, f):
        rho1, rho2 = hybrid_densities(f)
        return [rho1, rho2]


@dataclass
class LinearComboFlow(FlowModel):
    alpha: float = 1.0
    beta: float = 1.0

    name = "linear_combo"

    def velocity_pair(self, f):
        vp, _, _ = velocities_linear_combo(f, self.alpha, self.beta, self.eps_floor_frac)
        return vp

    def phase_densities(self, f):
        return [
            self.alpha * f.psi1 + self.beta * f.psi2,
            self.alpha * f.psi1 - self.beta * f.psi2,
        ]
