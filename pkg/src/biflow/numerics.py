"""Finite-difference stencils used throughout the engine.

All first derivatives are second-order central differences, with
second-order one-sided stencils at non-periodic edges.
"""

import numpy as np


def diff1(y, h, periodic=False, axis=0):
    """First derivative of sampled data along one axis."""
    y = np.asarray(y, dtype=float)
    if periodic:
        return (np.roll(y, -1, axis=axis) - np.roll(y, 1, axis=axis)) / (2.0 * h)
    out = np.empty_like(y)
    sl = _axis_slicer(y.ndim, axis)
    out[sl(slice(1, -1))] = (y[sl(slice(2, None))] - y[sl(slice(None, -2))]) / (2.0 * h)
    out[sl(0)] = (-3.0 * y[sl(0)] + 4.0 * y[sl(1)] - y[sl(2)]) / (2.0 * h)
    out[sl(-1)] = (3.0 * y[sl(-1)] - 4.0 * y[sl(-2)] + y[sl(-3)]) / (2.0 * h)
    return out


def diff2(y, h, periodic=False, axis=0):
    """Second derivative (3-point stencil); edge values are copied inward
    for non-periodic axes (callers restrict to interior points)."""
    y = np.asarray(y, dtype=float)
    if periodic:
        return (np.roll(y, -1, axis=axis) - 2.0 * y + np.roll(y, 1, axis=axis)) / (h * h)
    out = np.empty_like(y)
    sl = _axis_slicer(y.ndim, axis)
    out[sl(slice(1, -1))] = (
        y[sl(slice(2, None))] - 2.0 * y[sl(slice(1, -1))] + y[sl(slice(None, -2))]
    ) / (h * h)
    out[sl(0)] = out[sl(1)]
    out[sl(-1)] = out[sl(-2)]
    return out


def diff1_nonuniform(y, x):
    """First derivative of y(x) on a strictly increasing 1D abscissa."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    out = np.empty_like(y)
    out[1:-1] = (y[2:] - y[:-2]) / (x[2:] - x[:-2])
    out[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (x[2] - x[0])
    out[-1] = (3.0 * y[-1] - 4.0 * y[-2] + y[-3]) / (x[-1] - x[-3])
    return out


def spectral_diff_periodic(y, period, axis=0, order=1):
    """Derivative along a uniformly sampled periodic axis via FFT.

    Exact for band-limited data, which is what the periodic fifth
    coordinate carries.
    """
    y = np.asarray(y, dtype=float)
    m = y.shape[axis]
    k = 2.0j * np.pi * np.fft.fftfreq(m, d=period / m)
    shape = [1] * y.ndim
    shape[axis] = m
    mult = k.reshape(shape) ** order
    if order % 2 == 0:
        mult = mult.real
    return np.fft.ifft(np.fft.fft(y, axis=axis) * mult, axis=axis).real


def _axis_slicer(ndim, axis):
    def sl(index):
        full = [slice(None)] * ndim
        full[axis] = index
        return tuple(full)

    return sl
