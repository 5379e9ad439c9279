"""One-dimensional transversal profiles.

w solves w'' - w + w^p = 0 on the line and decays; Z is the principal
eigenfunction of the linearised operator, with eigenvalue lambda0.  The
correction profiles omega_k solve -omega'' + omega - p w^{p-1} omega = rhs_k
and are kept orthogonal to the kernel w'.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np
from scipy import integrate, sparse
from scipy.sparse import linalg as splinalg
from scipy.interpolate import CubicSpline

from . import _numerics as nm

__all__ = ["Profile", "ground_state", "solve_omega", "interaction_constants",
           "correction_coefficients", "ProfileError", "OMEGA_RHS"]


class ProfileError(ValueError):
    pass


def _quad(fun, a=0.0, b=np.inf):
    val, err = integrate.quad(fun, a, b, epsabs=1e-14, epsrel=1e-12, limit=400)
    return val


@dataclass
class Profile:
    """Transversal data for exponent p on the grid x in [-L, L]."""
    p: float
    L: float
    x: np.ndarray
    Cp: float
    norm_Z: float
    omega: Dict[int, np.ndarray] = field(default_factory=dict)
    omega_solvability: Dict[int, float] = field(default_factory=dict)
    omega_multiplier: Dict[int, float] = field(default_factory=dict)
    rho: tuple = ()
    _splines: Dict[int, object] = field(default_factory=dict, repr=False)

    @property
    def sigma(self):
        return (self.p + 1.0) / (self.p - 1.0) - 0.5

    @property
    def lambda0(self):
        return (self.p - 1.0) * (self.p + 3.0) / 4.0

    @property
    def h(self):
        return self.x[1] - self.x[0]

    # closed forms -------------------------------------------------------
    def w(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        q = self.p - 1.0
        return self.Cp * np.exp(-x) * (1.0 + np.exp(-q * x)) ** (-2.0 / q)

    def w_tail(self, x):
        """e^{|x|} w(x), bounded and smooth in |x|."""
        x = np.abs(np.asarray(x, dtype=float))
        q = self.p - 1.0
        return self.Cp * (1.0 + np.exp(-q * x)) ** (-2.0 / q)

    def dw(self, x):
        x = np.asarray(x, dtype=float)
        return -self.w(x) * np.tanh(0.5 * (self.p - 1.0) * x)

    def d2w(self, x):
        w = self.w(x)
        return w - w**self.p

    def Z(self, x):
        return self.w(x) ** (0.5 * (self.p + 1.0)) / self.norm_Z

    def dZ(self, x):
        m = 0.5 * (self.p + 1.0)
        w = self.w(x)
        return m * w ** (m - 1.0) * self.dw(x) / self.norm_Z

    def d2Z(self, x):
        """Second derivative from w'^2 = w^2 - 2 w^{p+1}/(p+1) and w'' = w - w^p."""
        m = 0.5 * (self.p + 1.0)
        w = self.w(x)
        w1sq = w**2 - 2.0 * w ** (self.p + 1.0) / (self.p + 1.0)
        w2 = w - w**self.p
        return m * ((m - 1.0) * w ** (m - 2.0) * w1sq + w ** (m - 1.0) * w2) / self.norm_Z

    # grid helpers -------------------------------------------------------
    def integral(self, y):
        return nm.integrate_uniform(y, self.h)

    def omega_eval(self, k, x):
        """omega_k at arbitrary x (cubic interpolation, zero outside [-L, L])."""
        if k not in self.omega:
            solve_omega(self, k)
        if k not in self._splines:
            self._splines[k] = CubicSpline(self.x, self.omega[k])
        x = np.asarray(x, dtype=float)
        out = self._splines[k](np.clip(x, -self.L, self.L))
        return np.where(np.abs(x) <= self.L, out, 0.0)

    def table(self):
        cols = {"x": self.x, "w": self.w(self.x), "dw": self.dw(self.x), "Z": self.Z(self.x)}
        for k in range(4):
            if k not in self.omega:
                solve_omega(self, k)
            cols[f"omega{k}"] = self.omega[k]
        return cols


def ground_state(p: float = 3.0, L: float = 20.0, N: int = 4000) -> Profile:
    """Closed-form ground state and eigenfunction on a uniform grid."""
    if not p > 1:
        raise ProfileError("exponent p must exceed 1")
    if L < 15 or N < 2000:
        raise ProfileError("need L >= 15 and N >= 2000")
    if N % 2:
        N += 1
    q = p - 1.0
    Cp = ((p + 1.0) / 2.0) ** (1.0 / q) * 2.0 ** (2.0 / q)
    x = np.linspace(-L, L, N + 1)
    prof = Profile(p=float(p), L=float(L), x=x, Cp=Cp, norm_Z=1.0)
    m = p + 1.0
    # int w^{p+1} over the line, tail-stable integrand
    Iw = 2.0 * _quad(lambda s: np.exp(-m * s) * prof.w_tail(s) ** m)
    prof.norm_Z = float(np.sqrt(Iw))
    return prof


# right-hand sides of the omega problems and their parity (+1 even, -1 odd)
def _rhs(prof, k, x):
    s = prof.sigma
    w, dw, d2w = prof.w(x), prof.dw(x), prof.d2w(x)
    if k == 0:
        return dw + x * w / s
    if k == 1:
        return -x * w / (2 * s) + x * d2w
    if k == 2:
        return w
    if k == 3:
        return d2w
    raise ProfileError("k must be 0, 1, 2 or 3")


OMEGA_RHS = {0: "w' + x w / sigma", 1: "-x w / (2 sigma) + x w''", 2: "w", 3: "w''"}


def solve_omega(prof: Profile, k: int, tol: float = 1e-8) -> np.ndarray:
    """Solve -omega'' + omega - p w^{p-1} omega = rhs_k with omega(+-L) = 0.

    Fourth-order Numerov differencing; the kernel direction w' is removed
    by a bordered system (omega orthogonal to w', with a scalar multiplier
    absorbing the residual of the solvability condition).
    """
    x, h = prof.x, prof.h
    rhs = _rhs(prof, k, x)
    dw = prof.dw(x)
    solv = float(prof.integral(rhs * dw))
    if abs(solv) > tol:
        raise ProfileError(f"solvability residual {solv:.3g} for omega_{k}")
    qv = 1.0 - prof.p * prof.w(x) ** (prof.p - 1.0)
    n = len(x)
    ni = n - 2
    # Numerov: (u_{i+1}-2u_i+u_{i-1})/h^2 = (g_{i+1}+10 g_i+g_{i-1})/12, g = q u - r + mu w'
    c = h * h / 12.0
    qi = qv[1:-1]
    main = -2.0 - 10.0 * c * qi
    off_lo = 1.0 - c * qv[1:-2]
    off_up = 1.0 - c * qv[2:-1]
    A = sparse.diags([off_lo, main, off_up], [-1, 0, 1], shape=(ni, ni), format="csr")
    r = rhs
    br = -c * (r[2:] + 10.0 * r[1:-1] + r[:-2])
    bw = c * (dw[2:] + 10.0 * dw[1:-1] + dw[:-2])
    wts = np.full(ni, h)
    row = sparse.csr_matrix((wts * dw[1:-1])[None, :])
    K = sparse.bmat([[A, sparse.csr_matrix(bw[:, None])], [row, None]], format="csc")
    sol = splinalg.spsolve(K, np.concatenate([br, [0.0]]))
    om = np.zeros(n)
    om[1:-1] = sol[:-1]
    # exact orthogonality in the Simpson inner product
    om = om - prof.integral(om * dw) / prof.integral(dw * dw) * dw
    prof.omega[k] = om
    prof.omega_solvability[k] = solv
    prof.omega_multiplier[k] = float(sol[-1])
    prof._splines.pop(k, None)
    return om


def interaction_constants(prof: Profile):
    """(rho1, rho2, rho3, rho4) by adaptive quadrature on closed forms."""
    p, Cp = prof.p, prof.Cp
    q = p - 1.0
    rho1 = 2.0 * _quad(lambda s: prof.dw(s) ** 2)
    # w^{p-1} w' (e^{-x} - e^{x}) = w^{p-1} tanh(q x/2) (e^{x} w)(1 - e^{-2x})
    rho2 = p * Cp * _quad(lambda s: prof.w(s) ** q * np.tanh(0.5 * q * s) * prof.w_tail(s) * (1.0 - np.exp(-2 * s)))
    rho3 = 2.0 * 2.0 * _quad(lambda s: prof.d2w(s) * prof.Z(s))
    # w^{p-1} Z (e^{-x} - e^{x}) = -w^{3(p-1)/2} (e^{x} w)(1 - e^{-2x}) / norm_Z
    rho4 = -p * Cp / prof.norm_Z * _quad(
        lambda s: prof.w(s) ** (1.5 * q) * prof.w_tail(s) * (1.0 - np.exp(-2 * s)))
    prof.rho = (rho1, rho2, rho3, rho4)
    return prof.rho


def correction_coefficients(chart, prof: Profile, identity_tol: float = 1e-6, stationary_tol: float = 1e-4):
    """Coefficient tables of the first-order corrections and the identity check.

    Returns a dict with a10..a13, the residual of h3 = h8/2 - sigma V_t/beta^2,
    and that residual predicted from the stationarity residual r, namely
    -(a1 at2 n1^2 + a2 at1 n2^2) r / hk1.
    """
    from .geodesic import stationarity_residual
    h1, h3, h8 = chart.h[0], chart.h[2], chart.h[7]
    beta = chart.beta
    s = prof.sigma
    out = {
        "a10": h3 / (beta * h1),
        "a11": h8 / (beta * h1),
        "a12": -chart.Vt / (beta**2 * h1),
        "a13": h8 / h1,
    }
    ident = h3 - (0.5 * h8 - s * chart.Vt / beta**2)
    r = stationarity_residual(chart)
    n1, n2 = chart.normal
    D = chart.a[0] * chart.at[1] * n1**2 + chart.a[1] * chart.at[0] * n2**2
    out["identity_residual"] = ident
    out["identity_from_stationarity"] = -D * r / chart.hk1
    if np.max(np.abs(r)) <= stationary_tol and np.max(np.abs(ident)) > identity_tol:
        raise ProfileError("stationarity identity violated on a curve flagged stationary")
    return out
