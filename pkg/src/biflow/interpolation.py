"""Interpolation utilities.

Monotone cubic (PCHIP) interpolation is the workhorse for resampling
carried densities over trajectory positions; a batched periodic cubic
spline handles the periodic fifth coordinate, where many small
independent interpolations per step make per-row scipy objects too slow.
"""

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import OutOfDomain


def pchip(x, y):
    return PchipInterpolator(x, y, extrapolate=True)


def pchip_periodic(x, y, period):
    """PCHIP over one period of samples, evaluable at any real point."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x_ext = np.concatenate([x - period, x, x + period])
    y_ext = np.concatenate([y, y, y])
    interp = PchipInterpolator(x_ext, y_ext, extrapolate=False)
    x0 = x[0]

    def evaluate(q):
        q = np.asarray(q, dtype=float)
        return interp(x0 + np.mod(q - x0, period))

    return evaluate


def clamp_to_range(xq, lo, hi, margin, time=None):
    """Clip query points into [lo, hi], allowing an overshoot up to
    ``margin`` on each side.  Beyond the margin the lookup is refused."""
    xq = np.asarray(xq, dtype=float)
    if margin < 0:
        margin = 0.0
    low_break = xq < lo - margin
    high_break = xq > hi + margin
    if np.any(low_break) or np.any(high_break):
        bad = xq[low_break | high_break]
        raise OutOfDomain(
            f"evaluation point {bad.flat[0]:.6g} outside covered range "
            f"[{lo:.6g}, {hi:.6g}] by more than margin {margin:.3g}",
            where=float(bad.flat[0]),
            time=time,
        )
    return np.clip(xq, lo, hi)


class PeriodicSplineBatch:
    """Batch of independent periodic cubic splines with shared layout.

    Each row b has its own strictly increasing nodes ``s[b, :]`` spanning
    less than one period, its own values (one or more channels), and is
    queried at a single point.  Natural periodic closure; dense solve per
    row is cheap for the small node counts used here (M <= 64).
    """

    def __init__(self, nodes, values, period):
        nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[:, :, None]
        b, m = nodes.shape
        order = np.argsort(nodes, axis=1)
        self.nodes = np.take_along_axis(nodes, order, axis=1)
        self.values = np.take_along_axis(values, order[:, :, None], axis=1)
        self.period = float(period)

        h = np.diff(self.nodes, axis=1)
        h_last = self.period - (self.nodes[:, -1] - self.nodes[:, 0])
        if np.any(h <= 0) or np.any(h_last <= 0):
            raise ValueError("periodic spline nodes must be distinct within one period")
        self.h = np.concatenate([h, h_last[:, None]], axis=1)  # (b, m), cyclic

        # Cyclic tridiagonal system for the second-derivative moments.
        idx = np.arange(m)
        prev = (idx - 1) % m
        h_i = self.h
        h_prev = self.h[:, prev]
        a_mat = np.zeros((b, m, m))
        a_mat[:, idx, prev] = h_prev / 6.0
        a_mat[:, idx, idx] = (h_prev + h_i) / 3.0
        a_mat[:, idx, (idx + 1) % m] += h_i / 6.0
        y = self.values
        y_next = y[:, (idx + 1) % m, :]
        y_prev = y[:, prev, :]
        rhs = (y_next - y) / h_i[:, :, None] - (y - y_prev) / h_prev[:, :, None]
        self.moments = np.linalg.solve(a_mat, rhs)  # (b, m, c)

    def _locate(self, q):
        s0 = self.nodes[:, 0]
        qr = s0 + np.mod(np.asarray(q, dtype=float) - s0, self.period)
        idx = np.sum(qr[:, None] >= self.nodes, axis=1) - 1
        idx = np.clip(idx, 0, self.nodes.shape[1] - 1)
        return qr, idx

    def evaluate(self, q, derivative=False):
        """Value (and optionally s-derivative) of each row's spline at q."""
        b, m = self.nodes.shape
        qr, i = self._locate(q)
        rows = np.arange(b)
        i_next = (i + 1) % m
        s_i = self.nodes[rows, i]
        h = self.h[rows, i]
        t = qr - s_i
        u = h - t
        y_i = self.values[rows, i, :]
        y_n = self.values[rows, i_next, :]
        m_i = self.moments[rows, i, :]
        m_n = self.moments[rows, i_next, :]
        h_ = h[:, None]
        t_ = t[:, None]
        u_ = u[:, None]
        val = (
            m_i * u_**3 / (6.0 * h_)
            + m_n * t_**3 / (6.0 * h_)
            + (y_i - m_i * h_**2 / 6.0) * u_ / h_
            + (y_n - m_n * h_**2 / 6.0) * t_ / h_
        )
        if not derivative:
            return val
        der = (
            -m_i * u_**2 / (2.0 * h_)
            + m_n * t_**2 / (2.0 * h_)
            + (y_n - y_i) / h_
            - (m_n - m_i) * h_ / 6.0
        )
        return val, der
