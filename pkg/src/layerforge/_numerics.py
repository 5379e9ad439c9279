"""Small numerical helpers shared across modules."""
from __future__ import annotations

import numpy as np
from scipy import integrate


def fd_weights(z, x, m):
    """Fornberg weights for derivatives 0..m at z from nodes x.

    Returns an array of shape (m+1, len(x)).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((m + 1, n))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def derivative(y, h, order=1, periodic=False, accuracy=4):
    """Finite-difference derivative of samples on a uniform grid.

    Centered stencils of the given accuracy in the interior; one-sided
    stencils of the same accuracy near the ends.  For periodic data the
    last sample duplicates the first and the stencil wraps.
    Works along the last axis.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[-1]
    half = accuracy // 2 + (1 if order > 2 else 0)
    if periodic:
        core = y[..., :-1]
        m = core.shape[-1]
        w = fd_weights(0.0, np.arange(-half, half + 1), order)[order]
        out = np.zeros_like(core)
        for s, wk in zip(range(-half, half + 1), w):
            out += wk * np.roll(core, -s, axis=-1)
        out /= h**order
        return np.concatenate([out, out[..., :1]], axis=-1)
    width = 2 * half + 1
    if n < width + 1:
        raise ValueError("grid too small for the requested stencil")
    out = np.empty_like(y)
    wc = fd_weights(0.0, np.arange(-half, half + 1), order)[order]
    inner = np.zeros(y.shape[:-1] + (n - 2 * half,))
    for s, wk in zip(range(-half, half + 1), wc):
        inner += wk * y[..., half + s:n - half + s]
    out[..., half:n - half] = inner
    npts = order + accuracy
    for i in range(half):
        w = fd_weights(float(i), np.arange(npts), order)[order]
        out[..., i] = y[..., :npts] @ w
        w = fd_weights(float(npts - 1 - i), np.arange(npts), order)[order]
        out[..., n - 1 - i] = y[..., n - npts:] @ w
    return out / h**order


def integrate_uniform(y, h, periodic=False):
    """Integral of samples on a uniform grid (Simpson, or trapezoid if periodic)."""
    y = np.asarray(y, dtype=float)
    if periodic:
        return h * np.sum(y[..., :-1], axis=-1)
    return integrate.simpson(y, dx=h, axis=-1)


def cumulative_uniform(y, h):
    """Cumulative integral from the first node, fourth-order accurate."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    out = np.zeros(n)
    if n < 4:
        out[1:] = np.cumsum(0.5 * h * (y[1:] + y[:-1]))
        return out
    # cubic-interpolation based panels: integral over [x_i, x_{i+1}]
    seg = h / 24.0 * (-y[:-3] + 13 * y[1:-2] + 13 * y[2:-1] - y[3:])
    first = h / 24.0 * (9 * y[0] + 19 * y[1] - 5 * y[2] + y[3])
    last = h / 24.0 * (9 * y[-1] + 19 * y[-2] - 5 * y[-3] + y[-4])
    panels = np.concatenate([[first], seg, [last]])
    out[1:] = np.cumsum(panels)
    return out


def smooth_step(x):
    """C-infinity step: 0 for x<=0, 1 for x>=1."""
    x = np.asarray(x, dtype=float)
    a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


def smooth_step_derivs(x):
    """Value, first and second derivative of ``smooth_step``."""
    x = np.asarray(x, dtype=float)
    inside = (x > 0) & (x < 1)
    xi = np.where(inside, x, 0.5)
    # log-derivative form of f(x) = A/(A+B), A=exp(-1/x), B=exp(-1/(1-x))
    A = np.exp(-1.0 / xi)
    B = np.exp(-1.0 / (1.0 - xi))
    S = A + B
    dA = A / xi**2
    dB = -B / (1.0 - xi)**2
    d2A = A * (1.0 / xi**4 - 2.0 / xi**3)
    d2B = B * (1.0 / (1.0 - xi)**4 - 2.0 / (1.0 - xi)**3)
    f = A / S
    f1 = (dA * S - A * (dA + dB)) / S**2
    # f = A/S  ->  f'' = (A'' S - A S'')/S^2 - 2 S' (A' S - A S')/S^3
    dS = dA + dB
    d2S = d2A + d2B
    f2 = (d2A * S - A * d2S) / S**2 - 2.0 * dS * (dA * S - A * dS) / S**3
    val = np.where(x >= 1, 1.0, np.where(inside, f, 0.0))
    return val, np.where(inside, f1, 0.0), np.where(inside, f2, 0.0)


def loglog_slope(x, y):
    """Least-squares slope of log y against log x."""
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(x, y, 1)[0])
