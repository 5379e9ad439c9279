"""Assembly of the multi-layer approximation and its PDE residual.

The approximation near the curve is

    u = eta(t) alpha(theta) [ sum_j w(x_j) + eps * corrections ],
    x_j = beta(theta) (t/eps - f_j(theta)),

written in the anisotropic Fermi chart (t, theta); eta is a smooth
cutoff equal to 1 for |t| <= 3 delta and 0 for |t| >= 6 delta.  The
residual of eps^2 div(a grad u) - V u + u^p is measured on Cartesian
grids by conservative differencing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator

from . import _numerics as nm
from .geometry import chart_map

__all__ = ["AssemblyError", "FermiInversionError", "fermi_inverse", "LayerAnsatz", "build_ansatz",
           "ResidualReport", "pde_residual", "resonance_constants", "resonance_profile",
           "spacing_report", "transects", "cutoff"]


class AssemblyError(RuntimeError):
    pass


class FermiInversionError(AssemblyError):
    pass


def cutoff(t, delta):
    """1 for |t| <= 3 delta, 0 for |t| >= 6 delta, smooth in between."""
    return 1.0 - nm.smooth_step((np.abs(t) - 3 * delta) / (3 * delta))


def fermi_inverse(chart, Y, band: float, tol: float = 1e-12, maxiter: int = 40):
    """Chart coordinates (t, theta) of points Y (shape (2, n)).

    Starts from the nearest tabulated curve point and runs a damped Newton
    iteration on F(t, theta) = y.  Points whose estimate leaves |t| <= band
    are returned with ``inside`` False.  Raises if a point that stays inside
    the band does not converge.
    """
    Y = np.asarray(Y, dtype=float)
    curve, fields, contact = chart.curve, chart.fields, chart.contact
    lo, hi = curve.theta_range
    if not chart.closed:
        lo, hi = max(lo, -0.1), min(hi, 1.1)
    ths = np.linspace(lo, hi, 4 * len(chart.theta))
    P, _, n, _ = curve.evaluate(ths)
    tree = cKDTree(P.T)
    _, idx = tree.query(Y.T)
    theta = ths[idx]
    F0, Ft0, _ = chart_map(curve, fields, contact, np.zeros_like(theta), theta)
    t = np.sum((Y - F0) * Ft0, axis=0) / np.sum(Ft0 * Ft0, axis=0)
    active = np.abs(t) <= 1.5 * band
    conv = np.zeros(Y.shape[1], dtype=bool)
    scale = max(1.0, float(np.max(np.abs(Y))))
    for _ in range(maxiter):
        ia = np.flatnonzero(active & ~conv)
        if ia.size == 0:
            break
        F, Ft, Fth = chart_map(curve, fields, contact, t[ia], theta[ia])
        r = F - Y[:, ia]
        det = Ft[0] * Fth[1] - Ft[1] * Fth[0]
        dt = (Fth[1] * r[0] - Fth[0] * r[1]) / det
        dth = (-Ft[1] * r[0] + Ft[0] * r[1]) / det
        lim = np.maximum(np.abs(dth) / 0.05, np.abs(dt) / (0.25 * band + 1e-300))
        damp = 1.0 / np.maximum(lim, 1.0)
        t[ia] -= damp * dt
        theta[ia] -= damp * dth
        if not chart.closed:
            theta[ia] = np.clip(theta[ia], lo, hi)
        else:
            theta[ia] = np.mod(theta[ia], 1.0)
        err = np.hypot(r[0], r[1])
        conv[ia] = err <= tol * scale
        active[ia] = np.abs(t[ia]) <= 1.5 * band
    inside = conv & (np.abs(t) <= band)
    bad = active & ~conv & (np.abs(t) <= band)
    if np.any(bad):
        raise FermiInversionError(f"Fermi inversion did not converge at {int(bad.sum())} points")
    return t, theta, inside


@dataclass
class ResidualReport:
    """Residual of the assembled approximation on a rectangle grid."""
    eps: float
    h: float
    y1: np.ndarray
    y2: np.ndarray
    u: np.ndarray
    R: np.ndarray
    band: np.ndarray
    sup_R_band: float
    l2_R: float
    sup_boundary_flux: float
    boundary_flux: dict
    richardson: bool = False
    slope_estimate: float = np.nan
    sup_up: float = np.nan

    @property
    def relative_sup(self):
        return self.sup_R_band / self.sup_up if self.sup_up > 0 else np.nan

    def summary(self):
        return {"eps": self.eps, "h": self.h, "sup_R_band": self.sup_R_band, "l2_R": self.l2_R,
                "sup_boundary_flux": self.sup_boundary_flux, "slope_estimate": self.slope_estimate,
                "richardson": self.richardson, "sup_u_p": self.sup_up}

    def to_rows(self):
        Y1, Y2 = np.meshgrid(self.y1, self.y2, indexing="ij")
        return np.column_stack([Y1.ravel(), Y2.ravel(), self.u.ravel(), self.R.ravel()])


class LayerAnsatz(BaseEstimator):
    """Multi-layer approximation; ``fit`` binds the data, ``predict`` evaluates u.

    Parameters are the small parameter, the cutoff radius (chart units)
    and the component toggles.  The shift function of the layer cluster is
    taken as zero and the e-amplitudes default to zero.
    """

    def __init__(self, eps=0.02, delta=0.2, leading=True, omega_corrections=False,
                 resonance_A=False, eZ_term=False):
        self.eps = eps
        self.delta = delta
        self.leading = leading
        self.omega_corrections = omega_corrections
        self.resonance_A = resonance_A
        self.eZ_term = eZ_term

    def fit(self, chart, y=None, profile=None, solution=None, e=None):
        if profile is None or solution is None:
            raise AssemblyError("fit needs a profile and a Toda solution")
        if abs(solution.eps - self.eps) > 1e-14 * max(1.0, self.eps):
            raise AssemblyError("eps differs from the Toda solution's eps")
        self.chart_ = chart
        self.profile_ = profile
        self.solution_ = solution
        per = chart.closed
        bc = "periodic" if per else "not-a-knot"
        th = chart.theta
        spl = lambda y: CubicSpline(th, y, bc_type=bc)
        self.alpha_ = spl(chart.alpha)
        self.beta_ = spl(chart.beta)
        self.f_ = CubicSpline(solution.theta, solution.f, axis=1, bc_type=bc)
        if self.omega_corrections:
            from .profiles import correction_coefficients, solve_omega
            cc = correction_coefficients(chart, profile)
            self.coef_ = {k: spl(cc[k]) for k in ("a10", "a11", "a12", "a13")}
            for k in range(4):
                if k not in profile.omega:
                    solve_omega(profile, k)
        if self.eZ_term:
            ee = np.zeros_like(solution.f) if e is None else np.asarray(e, float)
            self.e_ = CubicSpline(solution.theta, ee, axis=1, bc_type=bc)
        if self.resonance_A:
            c0, c1 = resonance_constants(chart, profile)
            dt, A, _ = resonance_profile(c0, c1, self.eps, profile.lambda0, chart.ell, chart.Q, th)
            self.A_ = spl(A)
        return self

    def local(self, t, theta):
        """u at chart coordinates (cutoff included)."""
        t = np.asarray(t, float)
        theta = np.asarray(theta, float)
        eps, pr = self.eps, self.profile_
        al, be = self.alpha_(theta), self.beta_(theta)
        F = self.f_(theta)
        x = be[None] * (t[None] / eps - F)
        v = np.zeros_like(t)
        if self.leading:
            v = v + pr.w(x).sum(axis=0)
        if self.omega_corrections:
            a10, a11, a12, a13 = (self.coef_[k](theta) for k in ("a10", "a11", "a12", "a13"))
            corr = (a10 * pr.omega_eval(0, x) + a11 * pr.omega_eval(1, x)
                    + F * a12 * pr.omega_eval(2, x) + F * a13 * pr.omega_eval(3, x))
            v = v + eps * corr.sum(axis=0)
        if self.eZ_term:
            v = v + eps * (self.e_(theta) * pr.Z(x)).sum(axis=0)
        if self.resonance_A:
            v = v + eps * (self.A_(theta) * pr.Z(x)).sum(axis=0)
        return cutoff(t, self.delta) * al * v

    def coordinates(self, Y):
        return fermi_inverse(self.chart_, Y, 6 * self.delta)

    def predict(self, Y):
        """u at points Y of shape (n, 2)."""
        Y = np.asarray(Y, float)
        t, theta, inside = self.coordinates(Y.T)
        u = np.zeros(len(Y))
        if np.any(inside):
            u[inside] = self.local(t[inside], theta[inside])
        return u


def build_ansatz(chart, profile, solution, eps, delta=0.2, **toggles) -> LayerAnsatz:
    return LayerAnsatz(eps=eps, delta=delta, **toggles).fit(chart, profile=profile, solution=solution)


def _grid_residual(ans, box, h):
    y1 = np.arange(box[0], box[1] + 0.5 * h, h)
    y2 = np.arange(box[2], box[3] + 0.5 * h, h)
    Y1, Y2 = np.meshgrid(y1, y2, indexing="ij")
    Y = np.column_stack([Y1.ravel(), Y2.ravel()])
    t, theta, inside = ans.coordinates(Y.T)
    U = np.zeros(len(Y))
    U[inside] = ans.local(t[inside], theta[inside])
    U = U.reshape(Y1.shape)
    band = (inside & (np.abs(t) <= 3 * ans.delta)).reshape(Y1.shape)
    fl = ans.chart_.fields
    p, eps = ans.chart_.p, ans.eps
    a1h = fl["a1"](0.5 * (Y1[1:] + Y1[:-1]), Y2[1:])
    a2h = fl["a2"](Y1[:, 1:], 0.5 * (Y2[:, 1:] + Y2[:, :-1]))
    fx = a1h * np.diff(U, axis=0) / h
    fy = a2h * np.diff(U, axis=1) / h
    div = np.full_like(U, np.nan)
    div[1:-1, 1:-1] = (np.diff(fx, axis=0)[:, 1:-1] + np.diff(fy, axis=1)[1:-1]) / h
    V = fl["V"](Y1, Y2)
    R = eps**2 * div - V * U + np.abs(U) ** (p - 1) * U
    # outward flux a grad u . nu on the four sides, one-sided 2nd order
    d1 = lambda A: (-3 * A[0] + 4 * A[1] - A[2]) / (2 * h)
    flux = {
        "y1_min": -fl["a1"](Y1[0], Y2[0]) * d1(U),
        "y1_max": -fl["a1"](Y1[-1], Y2[-1]) * d1(U[::-1]),
        "y2_min": -fl["a2"](Y1[:, 0], Y2[:, 0]) * d1(U.T),
        "y2_max": -fl["a2"](Y1[:, -1], Y2[:, -1]) * d1(U.T[::-1]),
    }
    return y1, y2, U, R, band, flux


def pde_residual(ans: LayerAnsatz, box=(-1.0, 1.0, 0.0, 1.0), h: Optional[float] = None,
                 richardson: bool = False) -> ResidualReport:
    """Interior and Neumann residual of the approximation on a rectangle.

    ``h`` defaults to eps/8 and must not exceed it.  With ``richardson`` the
    residual is also computed at h/2 and combined as (4 R_{h/2} - R_h)/3 on
    the coarse nodes; the observed refinement order is reported.
    """
    eps = ans.eps
    if h is None:
        h = eps / 8
    if h > eps / 8 * (1 + 1e-12):
        raise AssemblyError(f"grid too coarse: h={h:.3g} > eps/8")
    y1, y2, U, R, band, flux = _grid_residual(ans, box, h)
    slope = np.nan
    if richardson:
        _, _, U2, R2, _, _ = _grid_residual(ans, box, h / 2)
        Rf = R2[::2, ::2]
        if Rf.shape != R.shape:
            raise AssemblyError("grids do not nest; choose a box commensurate with h")
        Rx = (4 * Rf - R) / 3
        e1 = np.nanmax(np.abs((R - Rx)[band]))
        e2 = np.nanmax(np.abs((Rf - Rx)[band]))
        slope = float(np.log2(e1 / e2)) if e2 > 0 else np.inf
        R = Rx
    Rb = np.where(band, R, np.nan)
    sup = float(np.nanmax(np.abs(Rb)))
    l2 = float(np.sqrt(np.nansum(R**2) * h * h))
    sup_flux = max(float(np.max(np.abs(v[1:-1]))) for v in flux.values())
    supup = float(np.max(np.abs(U[band])) ** ans.chart_.p) if np.any(band) else 0.0
    return ResidualReport(eps=eps, h=h, y1=y1, y2=y2, u=U, R=R, band=band, sup_R_band=sup, l2_R=l2,
                          sup_boundary_flux=sup_flux, boundary_flux=flux, richardson=richardson,
                          slope_estimate=slope, sup_up=supup)


# ------------------------------------------------------------ resonance

def resonance_constants(chart, profile):
    """Endpoint constants c0, c1 of the resonance profile."""
    if chart.closed:
        return 0.0, 0.0
    xwZ = 2.0 * integrate.quad(lambda s: s * profile.dw(s) * profile.Z(s), 0, np.inf, epsrel=1e-12)[0]
    wZ = 2.0 * integrate.quad(lambda s: profile.w(s) * profile.Z(s), 0, np.inf, epsrel=1e-12)[0]
    lb = chart.d(chart.beta) / chart.beta
    la = chart.d(chart.alpha) / chart.alpha
    c0 = (chart.b2 + chart.b1 * lb[0]) * xwZ + chart.b1 * la[0] * wZ
    c1 = (chart.b7 + chart.b6 * lb[-1]) * xwZ + chart.b6 * la[-1] * wZ
    return float(c0), float(c1)


def resonance_profile(c0, c1, eps, lambda0, ell, Q, theta, min_sin: float = 1e-3):
    """A along the curve, the strip variable d(theta) and the map Upsilon.

    A(s) = (c0 cos(k l) - c1)/(k sin(k l)) cos(k s) + c0/k sin(k s) with
    k = sqrt(lambda0)/eps; d(theta) = int_0^theta Q.  Returns
    (d, A(d), Upsilon) where Upsilon(z) = d(eps z)/eps.
    """
    theta = np.asarray(theta, float)
    Q = np.broadcast_to(np.asarray(Q, float), theta.shape)
    k = np.sqrt(lambda0) / eps
    s = np.sin(k * ell)
    if abs(s) < min_sin:
        raise AssemblyError(f"resonant eps: |sin(sqrt(lambda0) l/eps)| = {abs(s):.3g}")
    d = nm.cumulative_uniform(Q, theta[1] - theta[0])
    A = (c0 * np.cos(k * ell) - c1) / (np.sqrt(lambda0) * s) * np.cos(k * d) + c0 / np.sqrt(lambda0) * np.sin(k * d)
    dspl = CubicSpline(theta, d)
    ups = lambda z: dspl(eps * np.asarray(z, float)) / eps
    return d, A, ups


# ---------------------------------------------------------- diagnostics

def spacing_report(solution, eps, beta):
    """Minimal scaled spacing min (f_{j+1} - f_j) beta / (2 |ln eps|)."""
    if solution.f.shape[0] < 2:
        return {}
    beta = np.broadcast_to(np.asarray(beta, float), solution.theta.shape)
    gaps = np.diff(solution.f, axis=0) * beta[None]
    L = 2 * abs(np.log(eps))
    ratio = gaps / L
    return {"eps": float(eps), "min_ratio": float(ratio.min()), "max_ratio": float(ratio.max()),
            "min_gap": float(gaps.min()), "rho_ratio": float(np.min(solution.rho) / L)}


def transects(ans: LayerAnsatz, thetas=(0.5,), half_width: Optional[float] = None, n: int = 401):
    """u along the chart normal line through each given theta (plot-ready rows)."""
    if half_width is None:
        half_width = 6 * ans.delta
    rows = []
    t = np.linspace(-half_width, half_width, n)
    for th in thetas:
        tt = np.full_like(t, th)
        F, _, _ = chart_map(ans.chart_.curve, ans.chart_.fields, ans.chart_.contact, t, tt)
        u = ans.local(t, tt)
        rows.append(np.column_stack([tt, t, F[0], F[1], u]))
    return np.vstack(rows)
