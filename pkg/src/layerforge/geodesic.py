"""Weighted length of curves and its first and second variations.

The weighted length is J = int V^sigma sqrt(a2 G1'^2 + a1 G2'^2) dtheta
along the deformed curve G(theta) = F(t(theta), theta) of the Fermi chart.
Stationary curves have J'(0) = 0; the Jacobi operator of J''(0) decides
non-degeneracy.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from . import _numerics as nm
from .geometry import FermiChart, chart_map, GeometryError

__all__ = [
    "weighted_length", "stationarity_residual", "first_variation_density",
    "first_variation", "second_variation", "second_variation_form",
    "VariationReport", "nondegeneracy", "jacobi_matrix", "explicit_coefficients",
]

_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)


def _with_derivative(pert, step=1e-4):
    if pert is None:
        return lambda th: (np.zeros_like(th), np.zeros_like(th))
    if isinstance(pert, tuple):
        f, df = pert
        return lambda th: (np.asarray(f(th), float), np.asarray(df(th), float))

    def both(th):
        d = (-pert(th + 2 * step) + 8 * pert(th + step) - 8 * pert(th - step) + pert(th - 2 * step)) / (12 * step)
        return np.asarray(pert(th), float), d
    return both


def weighted_length(chart: FermiChart, perturbation=None, panels: int = 256, radius: float = np.inf) -> float:
    """Weighted length of the curve theta -> F(t(theta), theta).

    ``perturbation`` is None, a callable t(theta), or a pair (t, t').
    Gauss-Legendre quadrature (6 points on each of ``panels`` panels).
    """
    fn = _with_derivative(perturbation)
    edges = np.linspace(0.0, 1.0, panels + 1)
    th = (0.5 * (edges[:-1, None] + edges[1:, None]) + 0.5 * np.diff(edges)[:, None] * _GL_X).ravel()
    wq = (0.5 * np.diff(edges)[:, None] * _GL_W).ravel()
    tt, dtt = fn(th)
    if np.any(np.abs(tt) > radius):
        raise GeometryError("deformation leaves the chart")
    f = chart.fields
    F, Ft, Fth = chart_map(chart.curve, f, chart.contact, tt, th)
    G = Fth + dtt * Ft
    a1 = f["a1"](F[0], F[1])
    a2 = f["a2"](F[0], F[1])
    V = f["V"](F[0], F[1])
    W = a2 * G[0]**2 + a1 * G[1]**2
    return float(np.sum(wq * V**chart.sigma * np.sqrt(W)))


def _D(chart):
    n1, n2 = chart.normal
    a1, a2 = chart.a
    at1, at2 = chart.at
    return a1 * at2 * n1**2 + a2 * at1 * n2**2


def stationarity_residual(chart: FermiChart) -> np.ndarray:
    """k minus the curvature a stationary curve would need at each node."""
    n1, n2 = chart.normal
    a1, a2 = chart.a
    dat1, dat2 = chart.dat
    D = _D(chart)
    rhs = ((a1 * dat2 - a2 * dat1) * n1 * n2
           + 0.5 * (chart.da[0] * n1**2 + chart.da[1] * n2**2)
           + chart.sigma * chart.Vt / chart.V * chart.f0) / D
    return chart.k - rhs


def first_variation_density(chart: FermiChart, residual=None) -> np.ndarray:
    """E(theta) with J'(0)[h] = int E h, written through the residual."""
    r = stationarity_residual(chart) if residual is None else residual
    return -chart.V**chart.sigma * _D(chart) * r / np.sqrt(chart.f0)


def first_variation(chart: FermiChart, h) -> float:
    E = first_variation_density(chart)
    hv = h(chart.theta) if callable(h) else np.asarray(h, float)
    return float(chart.integrate(E * hv))


def _H123(chart):
    s = chart.sigma
    V, Vt, Vtt = chart.V, chart.Vt, chart.Vtt
    sf = np.sqrt(chart.f0)
    Vs = V**s
    H1 = Vs * chart.w0 / sf
    H2 = Vs * chart.l1 / sf
    H3 = (Vs * chart.f2 / sf
          + (s * Vtt * V**(s - 1) + s * (s - 1) * Vt**2 * V**(s - 2)) * sf
          + s * Vt * V**(s - 1) * chart.f1 / sf
          - Vs * chart.f1**2 / (4 * chart.f0 * sf))
    return H1, H2, H3


def explicit_coefficients(chart: FermiChart):
    """H1, H2, H3 from hand-expanded closed forms in the curve data.

    Independent of the series arithmetic used to build the chart; used to
    cross-check it (and, for closed curves, it is the c = 0 reduction).
    """
    n1, n2 = chart.normal
    T1, T2 = chart.curve.tangent
    a1, a2 = chart.a
    at1, at2 = chart.at
    d1, d2 = chart.dat
    da1, da2 = chart.da
    dda1, dda2 = chart.dda
    k, c = chart.k, chart.c
    cp = chart.d(c) if not chart.closed else np.zeros_like(c)
    s = chart.sigma
    V, Vt, Vtt = chart.V, chart.Vt, chart.Vtt
    f0 = a1 * n1**2 + a2 * n2**2
    w0 = a1 * at2**2 * n2**2 + a2 * at1**2 * n1**2
    f1 = 2 * (a1 * d2 - a2 * d1) * n1 * n2 - 2 * k * (a1 * at2 * n1**2 + a2 * at1 * n2**2) + da1 * n1**2 + da2 * n2**2
    l1 = (c * f0 + a1 * at2 * d2 * n2**2 + a2 * at1 * d1 * n1**2
          - k * (a1 * at2**2 - a2 * at1**2) * n1 * n2 + (da1 * at2 - da2 * at1) * n1 * n2)
    f2 = (a1 * d2**2 * n2**2 + a2 * d1**2 * n1**2
          - 2 * k * (a1 * at2 * d2 - a2 * at1 * d1) * n1 * n2
          + k**2 * (a1 * at2**2 * n1**2 + a2 * at1**2 * n2**2)
          + 2 * (da1 * d2 - da2 * d1) * n1 * n2
          - 2 * k * (da1 * at2 * n1**2 + da2 * at1 * n2**2)
          + 0.5 * (dda1 * n1**2 + dda2 * n2**2)
          + cp * f0 + c * k * n1 * n2 * (a1 - a2))
    sf = np.sqrt(f0)
    Vs = V**s
    H1 = Vs * w0 / sf
    H2 = Vs * l1 / sf
    H3 = (Vs * f2 / sf + (s * Vtt * V**(s - 1) + s * (s - 1) * Vt**2 * V**(s - 2)) * sf
          + s * Vt * V**(s - 1) * f1 / sf - Vs * f1**2 / (4 * f0 * sf))
    return H1, H2, H3


def second_variation_form(chart: FermiChart, h, f=None) -> float:
    """J''(0)[h, f] = int H1 f'h' + H2 (fh)' + H3 fh, from the tables."""
    f = h if f is None else f
    H1, H2, H3 = _H123(chart)
    hv = h(chart.theta) if callable(h) else np.asarray(h, float)
    fv = f(chart.theta) if callable(f) else np.asarray(f, float)
    dh, df = chart.d(hv), chart.d(fv)
    return float(chart.integrate(H1 * df * dh + H2 * (fv * dh + df * hv) + H3 * fv * hv))


@dataclass
class VariationReport:
    """Second-variation tables and hypothesis flags for one chart."""
    theta: np.ndarray
    closed: bool
    residual: np.ndarray
    H1: np.ndarray
    H2: np.ndarray
    H3: np.ndarray
    dH1: np.ndarray
    dH2: np.ndarray
    tau1: np.ndarray
    tau2: np.ndarray
    zeta: np.ndarray
    hbar1: np.ndarray
    hbar2: np.ndarray
    K1: float
    K2: float
    b1: float
    b2: float
    b6: float
    b7: float
    stationary: bool
    admissible: bool
    tau2_positive: bool
    sigma_min: float = np.nan
    nondegenerate: Optional[bool] = None

    @property
    def q(self):
        """Zeroth-order Jacobi coefficient H2' - H3."""
        return self.dH2 - self.H3

    def summary(self):
        return {"stationary": bool(self.stationary), "admissible": bool(self.admissible),
                "tau2_positive": bool(self.tau2_positive), "sigma_min": float(self.sigma_min),
                "nondegenerate": None if self.nondegenerate is None else bool(self.nondegenerate),
                "max_abs_residual": float(np.max(np.abs(self.residual))),
                "K1": float(self.K1), "K2": float(self.K2),
                "min_tau2": float(np.min(self.tau2))}


def second_variation(chart: FermiChart, stationary_tol: float = 1e-4, admissible_tol: float = 1e-6,
                     nondeg_tol: float = 1e-6, compute_sigma: bool = True) -> VariationReport:
    """Fill the second-variation report for a chart."""
    H1, H2, H3 = _H123(chart)
    d = chart.d
    dH1, dH2 = d(H1), d(H2)
    beta = chart.beta
    bp, bpp = d(beta), d(beta, 2)
    lb = bp / beta
    tau1 = dH1 - 2 * lb * H1
    tau2 = dH2 - H3 + 2 * lb**2 * H1 - (bpp / beta) * H1 - lb * dH1
    alpha = chart.alpha
    la = d(alpha) / alpha
    zeta = 1.0 / (alpha**2 * beta * np.sqrt(chart.hk1))
    h = chart.h
    s = chart.sigma
    hbar1 = h[1] * (lb + 2 * la) + h[3] - 0.5 * h[5]
    hbar2 = (-(h[4] - h[6] + s * chart.Vtt / beta**2) - h[5] * (0.5 * lb + la)
             + s * chart.Vt / beta**2 * (chart.Vt / chart.V - h[7] / h[0]))
    r = stationarity_residual(chart)
    if chart.closed:
        K1 = K2 = 0.0
    else:
        K1 = lb[0] + chart.b2 / chart.b1
        K2 = lb[-1] + chart.b7 / chart.b6
    rep = VariationReport(
        theta=chart.theta, closed=chart.closed, residual=r, H1=H1, H2=H2, H3=H3, dH1=dH1, dH2=dH2,
        tau1=tau1, tau2=tau2, zeta=zeta, hbar1=hbar1, hbar2=hbar2, K1=float(K1), K2=float(K2),
        b1=chart.b1, b2=chart.b2, b6=chart.b6, b7=chart.b7,
        stationary=bool(np.max(np.abs(r)) <= stationary_tol),
        admissible=bool(abs(K1) <= admissible_tol and abs(K2) <= admissible_tol),
        tau2_positive=bool(np.all(tau2 > 0)))
    if compute_sigma:
        rep.sigma_min = nondegeneracy(rep, "periodic" if chart.closed else "robin")
        rep.nondegenerate = bool(rep.sigma_min >= nondeg_tol)
    return rep


def jacobi_matrix(theta, H1, dH1, q, mode="robin", bc=(1.0, 0.0, 1.0, 0.0)):
    """Second-order matrix of H1 f'' + H1' f' + q f with boundary rows folded in.

    Robin ends b1 f'(0) - b2 f(0) = 0, b6 f'(1) - b7 f(1) = 0 are imposed
    through ghost nodes, so the matrix is square on the grid nodes (the
    duplicate end node is dropped in periodic mode).
    """
    h = theta[1] - theta[0]
    n = len(theta)
    lo = H1 / h**2 - dH1 / (2 * h)
    di = -2 * H1 / h**2 + q
    up = H1 / h**2 + dH1 / (2 * h)
    if mode == "periodic":
        m = n - 1
        A = np.zeros((m, m))
        idx = np.arange(m)
        A[idx, idx] = di[:m]
        A[idx, (idx - 1) % m] += lo[:m]
        A[idx, (idx + 1) % m] += up[:m]
        return A
    b1, b2, b6, b7 = bc
    if b1 == 0 or b6 == 0:
        raise ValueError("Robin rows need nonzero derivative coefficients")
    A = np.zeros((n, n))
    idx = np.arange(1, n - 1)
    A[idx, idx - 1] = lo[1:-1]
    A[idx, idx] = di[1:-1]
    A[idx, idx + 1] = up[1:-1]
    # ghost f_{-1} = f_1 - 2h (b2/b1) f_0 ; f_{n} = f_{n-2} + 2h (b7/b6) f_{n-1}
    A[0, 0] = di[0] - lo[0] * 2 * h * b2 / b1
    A[0, 1] = lo[0] + up[0]
    A[-1, -1] = di[-1] + up[-1] * 2 * h * b7 / b6
    A[-1, -2] = lo[-1] + up[-1]
    return A


def nondegeneracy(report: VariationReport, mode: str = "robin", M: Optional[int] = None) -> float:
    """Smallest singular value of the discretised Jacobi problem.

    The matrix is measured in the trapezoid-weighted l2 norm, which tracks
    the continuous L2 operator norm, and divided by max H1 so the result is
    independent of the grid and of the overall scale of the coefficients.
    """
    th, H1, dH1, q = report.theta, report.H1, report.dH1, report.q
    if M is not None and M != len(th) - 1:
        bc = "periodic" if mode == "periodic" else "not-a-knot"
        new = np.linspace(0.0, 1.0, M + 1)
        from scipy.interpolate import CubicSpline
        H1, dH1, q = (CubicSpline(th, y, bc_type=bc)(new) for y in (H1, dH1, q))
        th = new
    A = jacobi_matrix(th, H1, dH1, q, mode, (report.b1, report.b2, report.b6, report.b7))
    h = th[1] - th[0]
    m = A.shape[0]
    w = np.full(m, h)
    if mode != "periodic":
        w[0] = w[-1] = 0.5 * h
    sw = np.sqrt(w)
    B = (sw[:, None] * A) / sw[None, :]
    smin = linalg.svdvals(B)[-1]
    return float(smin / np.max(np.abs(H1)))
