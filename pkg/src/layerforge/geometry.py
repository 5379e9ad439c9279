"""Curves, boundary contact and the anisotropic Fermi chart around a curve.

The chart is F(t, theta) = gamma(Theta) + t * (at1 n1, at2 n2)(Theta) with
Theta = theta + t^2 c(theta) / 2.  Here at = a / |a| is the normalised
diffusion pair and c interpolates the endpoint corrections that keep the
chart edges on the domain boundary.  All coefficient tables are exact
Taylor coefficients in t, obtained by truncated series arithmetic at each
node.

Orientation: n = (gamma2', -gamma1') and gamma'' = k n, so a circle run
clockwise has positive k.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy import interpolate, optimize

from . import _numerics as nm
from .fieldexpr import ScalarField

__all__ = [
    "GeometryError", "CurveError", "ContactError",
    "PlaneCurve", "build_curve", "BoundaryContact", "endpoint_contact",
    "boundary_preimage", "FermiChart", "build_chart", "metric_direct",
    "MetricSample", "chart_map", "make_fields", "CHART_COLUMNS",
]


class GeometryError(ValueError):
    pass


class CurveError(GeometryError):
    pass


class ContactError(GeometryError):
    pass


# ------------------------------------------------------------------ paths

class _ExprPath:
    def __init__(self, x, y, param, lo, hi):
        self.x = ScalarField(x, (param,))
        self.y = ScalarField(y, (param,))
        self.lo, self.hi = float(lo), float(hi)

    def __call__(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))[None, :]
        jx, jy = self.x.jet(u), self.y.jet(u)
        P = np.stack([jx.value, jy.value])
        dP = np.stack([jx.grad[0], jy.grad[0]])
        d2P = np.stack([jx.hess[0, 0], jy.hess[0, 0]])
        return P, dP, d2P


class _SplinePath:
    def __init__(self, points, closed):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
            raise CurveError("point list must have at least 4 rows of (y1, y2)")
        if closed and np.allclose(pts[0], pts[-1]):
            pts = pts[:-1]
        if closed:
            pts = np.vstack([pts, pts[:1]])
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg <= 0):
            raise CurveError("repeated consecutive points (zero speed)")
        u = np.concatenate([[0.0], np.cumsum(seg)])
        bc = "periodic" if closed else "not-a-knot"
        self.spline = interpolate.CubicSpline(u, pts, bc_type=bc, axis=0,
                                              extrapolate="periodic" if closed else True)
        self.lo, self.hi = 0.0, float(u[-1])

    def __call__(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        s = self.spline
        return s(u).T, s(u, 1).T, s(u, 2).T


_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


@dataclass
class PlaneCurve:
    """Unit-speed samples of a curve on a uniform theta grid.

    ``length`` is the arc length of the source path; theta is arc length
    divided by it, so the chart requires length 1.
    """
    closed: bool
    theta: np.ndarray
    gamma: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    curvature: np.ndarray
    length: float
    _path: object = field(repr=False, default=None)
    _ub: np.ndarray = field(repr=False, default=None)
    _sb: np.ndarray = field(repr=False, default=None)
    _s0: float = field(repr=False, default=0.0)

    @property
    def M(self):
        return len(self.theta) - 1

    @property
    def theta_range(self):
        """Normalised arc-length interval covered by the (extended) path."""
        if self.closed:
            return 0.0, 1.0
        return ((self._sb[0] - self._s0) / self.length, (self._sb[-1] - self._s0) / self.length)

    def _speed(self, u):
        _, dP, _ = self._path(u)
        return np.hypot(dP[0], dP[1])

    def _arc(self, u, k):
        """Arc length from the parameter origin to u, u inside panel k."""
        a = self._ub[k]
        half = 0.5 * (u - a)
        nodes = a[:, None] + half[:, None] * (_GL_X[None, :] + 1.0)
        sp = self._speed(nodes.ravel()).reshape(nodes.shape)
        return self._sb[k] + half * (sp @ _GL_W)

    def param_of(self, theta):
        """Source-path parameter at normalised arc length theta."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if self.closed:
            theta = np.mod(theta, 1.0)
        target = self._s0 + theta * self.length
        if np.any(target < self._sb[0] - 1e-12) or np.any(target > self._sb[-1] + 1e-12):
            raise CurveError("theta outside the extended curve range")
        k = np.clip(np.searchsorted(self._sb, target) - 1, 0, len(self._ub) - 2)
        a, b = self._ub[k], self._ub[k + 1]
        frac = (target - self._sb[k]) / (self._sb[k + 1] - self._sb[k])
        u = a + frac * (b - a)
        for _ in range(30):
            du = (self._arc(u, k) - target) / self._speed(u)
            u = np.clip(u - du, a, b)
            if np.max(np.abs(du)) < 1e-15 * max(1.0, np.max(np.abs(u))):
                break
        return u

    def evaluate(self, theta):
        """Position, unit tangent, normal and curvature at arbitrary theta."""
        u = self.param_of(theta)
        P, dP, d2P = self._path(u)
        sp = np.hypot(dP[0], dP[1])
        T = dP / sp
        n = np.stack([T[1], -T[0]])
        kstd = (dP[0] * d2P[1] - dP[1] * d2P[0]) / sp**3
        return P, T, n, -kstd


def build_curve(spec, M: int = 512, extension: float = 0.1) -> PlaneCurve:
    """Reparametrise a path by normalised arc length on M+1 nodes.

    ``spec`` is a mapping with either ``x``/``y`` expressions in the
    parameter ``param`` (default "s") over ``range``, or ``points`` (a list
    of (y1, y2) rows, fitted by a cubic spline).  ``closed`` marks periodic
    curves.  Open curves are extended by ``extension`` of their parameter
    range on each side so the chart can be evaluated slightly beyond the
    endpoints.  Self-intersection is not checked.
    """
    if M < 64:
        raise CurveError("M must be at least 64")
    closed = bool(spec.get("closed", False))
    if "points" in spec:
        path = _SplinePath(spec["points"], closed)
    elif "x" in spec and "y" in spec:
        lo, hi = spec.get("range", (0.0, 1.0))
        path = _ExprPath(str(spec["x"]), str(spec["y"]), spec.get("param", "s"), lo, hi)
    else:
        raise CurveError("curve needs either points or x/y expressions")
    lo, hi = path.lo, path.hi
    if not hi > lo:
        raise CurveError("empty parameter range")
    span = hi - lo
    ext = 0.0 if closed else extension * span
    if ext > 0:
        try:
            path(np.array([lo - ext, hi + ext]))
        except Exception:
            ext = 0.0
    npan = max(256, 2 * M)
    ub = np.linspace(lo - ext, hi + ext, npan + 1)
    nodes = 0.5 * (ub[:-1, None] + ub[1:, None]) + 0.5 * np.diff(ub)[:, None] * _GL_X[None, :]
    _, dP, _ = path(nodes.ravel())
    sp = np.hypot(dP[0], dP[1]).reshape(nodes.shape)
    _, dE, _ = path(ub)
    spe = np.hypot(dE[0], dE[1])
    if min(np.min(sp), np.min(spe)) <= 1e-12 * max(1.0, np.max(sp)):
        raise CurveError("zero-speed point in curve parametrisation")
    panel = 0.5 * np.diff(ub) * (sp @ _GL_W)
    sb = np.concatenate([[0.0], np.cumsum(panel)])
    curve = PlaneCurve(closed, None, None, None, None, None, 0.0, path, ub, sb, 0.0)
    # arc length at lo and hi
    ends = np.array([lo, hi])
    kk = np.clip(np.searchsorted(ub, ends) - 1, 0, npan - 1)
    s_lo, s_hi = curve._arc(ends, kk)
    curve._s0 = s_lo
    curve.length = s_hi - s_lo
    theta = np.linspace(0.0, 1.0, M + 1)
    P, T, n, k = curve.evaluate(theta)
    if closed:
        P[:, -1], T[:, -1], n[:, -1], k[-1] = P[:, 0], T[:, 0], n[:, 0], k[0]
    curve.theta, curve.gamma, curve.tangent, curve.normal, curve.curvature = theta, P, T, n, k
    return curve


# ---------------------------------------------------------- boundary contact

@dataclass
class BoundaryContact:
    """Curvatures of the boundary at the two endpoints of an open curve.

    k1, k2 are signed curvatures of the boundary graphs traversed in the
    direction of the chart normal; kt1 = k1/2, kt2 = k2/2 are the
    curvatures of the boundary preimages in the chart.
    """
    k1: float
    k2: float
    residual1: float
    residual2: float
    phi1: Optional[ScalarField] = None
    phi2: Optional[ScalarField] = None

    @property
    def kt1(self):
        return 0.5 * self.k1

    @property
    def kt2(self):
        return 0.5 * self.k2


def _graph_curvature(phi, y1, direction):
    j = phi.jet(np.array([[y1]]))
    d1, d2 = float(j.grad[0, 0]), float(j.hess[0, 0, 0])
    tau = np.array([1.0, d1]) / np.hypot(1.0, d1)
    kap = d2 / (1.0 + d1**2) ** 1.5
    sgn = 1.0 if tau @ direction >= 0 else -1.0
    return sgn * kap, tau, float(j.value[0])


def endpoint_contact(curve: PlaneCurve, phi1, phi2, tol: float = 1e-6) -> BoundaryContact:
    """Check that the open curve meets y2 = phi_i(y1) orthogonally at its ends.

    phi1 is the graph through gamma(0), phi2 the graph through gamma(1);
    either may be a ScalarField in y1 or an expression string.
    """
    if curve.closed:
        raise ContactError("closed curves have no endpoints")
    out = []
    for idx, phi in ((0, phi1), (-1, phi2)):
        if not isinstance(phi, ScalarField):
            phi = ScalarField(str(phi), ("y1",))
        P = curve.gamma[:, idx]
        T = curve.tangent[:, idx]
        n = curve.normal[:, idx]
        k, tau, val = _graph_curvature(phi, P[0], n)
        if abs(val - P[1]) > tol:
            raise ContactError(f"curve endpoint {tuple(P)} not on boundary graph (gap {abs(val - P[1]):.3g})")
        res = abs(float(tau @ T))
        if res > tol:
            raise ContactError(f"non-orthogonal contact at {tuple(P)}: residual {res:.3g} > {tol:g}")
        out.append((k, res, phi))
    return BoundaryContact(out[0][0], out[1][0], out[0][1], out[1][1], out[0][2], out[1][2])


def boundary_preimage(curve: PlaneCurve, fields, phi, end: int, ts) -> np.ndarray:
    """Chart parameter theta~(t) at which gamma(theta~) + t*at*n hits y2 = phi(y1).

    ``end`` is 0 or 1.  This is an independent numerical oracle for the
    endpoint curvature relation; no chart coefficients are used.
    """
    if not isinstance(phi, ScalarField):
        phi = ScalarField(str(phi), ("y1",))
    a1, a2 = fields["a1"], fields["a2"]

    def H(t, th):
        P, T, n, k = curve.evaluate(np.array([th]))
        A1, A2 = a1(P[0], P[1]), a2(P[0], P[1])
        r = np.hypot(A1, A2)
        return P[:, 0] + t * np.array([A1[0] / r[0] * n[0, 0], A2[0] / r[0] * n[1, 0]])

    def g(th, t):
        y = H(t, th)
        return y[1] - phi(np.array([y[0]]))[0]

    base = 0.0 if end == 0 else 1.0
    out = []
    for t in np.atleast_1d(ts):
        w = 0.05
        out.append(optimize.brentq(g, base - w, base + w, args=(float(t),), xtol=1e-16, rtol=1e-15) - base)
    return np.array(out)


# -------------------------------------------------------------- the chart

def make_fields(a1, a2, V) -> Dict[str, ScalarField]:
    conv = lambda e: e if isinstance(e, ScalarField) else ScalarField(str(e))
    return {"a1": conv(a1), "a2": conv(a2), "V": conv(V)}


def _mul(A, B):
    """Product of two truncated t-series (orders 0..2) with leading axis."""
    return np.stack([A[0] * B[0], A[0] * B[1] + A[1] * B[0], A[0] * B[2] + A[1] * B[1] + A[2] * B[0]])


def _ambient(fields, name, P, v1, v2):
    """Series a(F) = a + t grad.v1 + t^2 (grad.v2 + v1^T H v1 / 2)."""
    j = fields[name].jet(P)
    return j, np.stack([j.value, j.directional(v1), j.directional(v2) + 0.5 * j.directional2(v1)])


CHART_COLUMNS = ("theta", "f0", "f1", "f2", "l1", "w0", "w1", "hk1", "hk2", "hk3",
                 "h1", "h2", "h3", "h4", "h5", "h6", "h7", "h8", "alpha", "beta", "Q")


@dataclass
class FermiChart:
    """Per-node coefficient tables of the anisotropic Fermi chart.

    Names: f0..f2, l1, w0, w1, hk1..hk3 are the t-Taylor coefficients of
    the rescaled metric entries and of det(DF)^2; h1..h8 the coefficients
    of the diffusion operator in (t, theta); alpha, beta, Q the amplitude,
    width and strip factors; ell the integral of Q; b1, b2, b6, b7 the
    endpoint Robin coefficients.
    """
    curve: PlaneCurve
    fields: Dict[str, ScalarField]
    contact: Optional[BoundaryContact]
    p: float
    theta: np.ndarray
    closed: bool
    at: np.ndarray
    dat: np.ndarray
    c: np.ndarray
    q: np.ndarray
    a: np.ndarray
    da: np.ndarray
    dda: np.ndarray
    V: np.ndarray
    Vt: np.ndarray
    Vtt: np.ndarray
    f0: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    l1: np.ndarray
    w0: np.ndarray
    w1: np.ndarray
    hk1: np.ndarray
    hk2: np.ndarray
    hk3: np.ndarray
    h: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    Q: np.ndarray
    ell: float
    b1: float = np.nan
    b2: float = np.nan
    b6: float = np.nan
    b7: float = np.nan

    @property
    def sigma(self):
        return (self.p + 1.0) / (self.p - 1.0) - 0.5

    @property
    def dtheta(self):
        return self.theta[1] - self.theta[0]

    def __getattr__(self, name):
        if len(name) == 2 and name[0] == "h" and name[1] in "12345678":
            return self.h[int(name[1]) - 1]
        raise AttributeError(name)

    @property
    def k(self):
        return self.curve.curvature

    @property
    def normal(self):
        return self.curve.normal

    def d(self, y, order=1):
        """theta-derivative of a table on the chart grid (4th order)."""
        return nm.derivative(y, self.dtheta, order, periodic=self.closed)

    def integrate(self, y):
        return nm.integrate_uniform(y, self.dtheta, periodic=self.closed)

    def table(self):
        cols = {"theta": self.theta}
        for name in CHART_COLUMNS[1:]:
            cols[name] = getattr(self, name)
        return cols

    def interpolator(self, y):
        bc = "periodic" if self.closed else "not-a-knot"
        return interpolate.CubicSpline(self.theta, y, bc_type=bc)


def build_chart(curve: PlaneCurve, fields, contact: Optional[BoundaryContact] = None,
                p: float = 3.0, length_tol: float = 1e-6, isotropy_tol: float = 1e-8) -> FermiChart:
    """Tabulate all chart coefficients on the curve grid."""
    if p <= 1:
        raise GeometryError("exponent p must exceed 1")
    if abs(curve.length - 1.0) > length_tol:
        raise CurveError(f"curve length {curve.length:.12g} differs from 1; rescale the geometry")
    if not curve.closed and contact is None:
        raise ContactError("open curve needs boundary contact data")
    th = curve.theta
    P, T, n, k = curve.gamma, curve.tangent, curve.normal, curve.curvature
    ja1, ja2 = fields["a1"].jet(P), fields["a2"].jet(P)
    jV = fields["V"].jet(P)
    a = np.stack([ja1.value, ja2.value])
    if np.any(a <= 0) or np.any(jV.value <= 0):
        raise GeometryError("a1, a2 and V must be positive on the curve")
    if not curve.closed:
        for i in (0, -1):
            if abs(a[0, i] - a[1, i]) > isotropy_tol * max(1.0, abs(a[0, i])):
                raise GeometryError("a1 and a2 must coincide at the curve endpoints")
    ap = np.stack([ja1.directional(T), ja2.directional(T)])
    r = np.hypot(a[0], a[1])
    at = a / r
    dat = ap / r - a * (a[0] * ap[0] + a[1] * ap[1]) / r**3
    if curve.closed:
        c = np.zeros_like(th)
        cp = np.zeros_like(th)
    else:
        c = (contact.kt2 - contact.kt1) * th + contact.kt1
        cp = np.full_like(th, contact.kt2 - contact.kt1)
    v1 = at * n
    dv1 = dat * n - k * at * T
    v2 = 0.5 * c * T
    zero = np.zeros_like(v1)
    Ft = np.stack([v1, c * T, 1.5 * c * dv1])
    Fth = np.stack([T, dv1, 0.5 * (cp * T + c * k * n)])
    A1s = _ambient(fields, "a1", P, v1, v2)[1]
    A2s = _ambient(fields, "a2", P, v1, v2)[1]
    Vs = np.stack([jV.value, jV.directional(v1), jV.directional(v2) + 0.5 * jV.directional2(v1)])
    g11 = _mul(A1s, _mul(Fth[:, 1], Fth[:, 1])) + _mul(A2s, _mul(Fth[:, 0], Fth[:, 0]))
    g12 = _mul(A1s, _mul(Fth[:, 1], Ft[:, 1])) + _mul(A2s, _mul(Fth[:, 0], Ft[:, 0]))
    g22 = _mul(A1s, _mul(Ft[:, 1], Ft[:, 1])) + _mul(A2s, _mul(Ft[:, 0], Ft[:, 0]))
    det = _mul(Ft[:, 0], Fth[:, 1]) - _mul(Ft[:, 1], Fth[:, 0])
    hk = _mul(det, det)
    del zero
    f0, f1, f2 = g11
    l1 = g12[1]
    w0, w1 = g22[0], g22[1]
    hk1, hk2, hk3 = hk
    dth = th[1] - th[0]
    D = lambda y: nm.derivative(y, dth, 1, periodic=curve.closed)
    sh = np.sqrt(hk1)
    h = np.empty((8,) + th.shape)
    h[0] = f0 / hk1
    h[1] = w0 / hk1
    h[2] = f1 / hk1 - 0.5 * f0 * hk2 / hk1**2
    h[3] = D(w0 / sh) / sh - l1 / hk1
    h[4] = (2 * f2 / hk1 - 1.5 * f1 * hk2 / hk1**2 + f0 * hk2**2 / hk1**3
            - f0 * hk3 / hk1**2 - D(l1 / sh) / sh)
    h[5] = -2 * l1 / hk1
    h[6] = f2 / hk1 - f1 * hk2 / hk1**2 + f0 * (hk2**2 / hk1**3 - hk3 / hk1**2)
    h[7] = f1 / hk1 - f0 * hk2 / hk1**2
    V0 = jV.value
    alpha = V0 ** (1.0 / (p - 1.0))
    beta = np.sqrt(V0 / h[0])
    Q = np.sqrt(V0 / h[1])
    ell = nm.integrate_uniform(Q, dth, periodic=curve.closed)
    chart = FermiChart(
        curve=curve, fields=fields, contact=contact, p=float(p), theta=th, closed=curve.closed,
        at=at, dat=dat, c=c, q=c * T, a=a, da=np.stack([A1s[1], A2s[1]]),
        dda=2.0 * np.stack([A1s[2], A2s[2]]), V=V0, Vt=Vs[1], Vtt=2.0 * Vs[2],
        f0=f0, f1=f1, f2=f2, l1=l1, w0=w0, w1=w1, hk1=hk1, hk2=hk2, hk3=hk3, h=h,
        alpha=alpha, beta=beta, Q=Q, ell=float(ell))
    if not curve.closed:
        chart.b1, chart.b2 = 2 * w0[0], -2 * l1[0]
        chart.b6, chart.b7 = 2 * w0[-1], -2 * l1[-1]
    return chart


# ---------------------------------------------------------- direct oracle

@dataclass
class MetricSample:
    """Euclidean Gram entries of DF and the rescaled entries at (t, theta)."""
    g11: np.ndarray
    g12: np.ndarray
    g22: np.ndarray
    g: np.ndarray
    gt11: np.ndarray
    gt12: np.ndarray
    gt22: np.ndarray
    det: np.ndarray
    F: np.ndarray
    Ft: np.ndarray
    Fth: np.ndarray

    def __iter__(self):
        return iter((self.g11, self.g12, self.g22, self.g))


def _chart_frame(curve, fields, Th):
    """gamma, T, n, k, at, at' at arbitrary theta values."""
    P, T, n, k = curve.evaluate(Th)
    j1, j2 = fields["a1"].jet(P), fields["a2"].jet(P)
    a = np.stack([j1.value, j2.value])
    ap = np.stack([j1.directional(T), j2.directional(T)])
    r = np.hypot(a[0], a[1])
    at = a / r
    dat = ap / r - a * (a[0] * ap[0] + a[1] * ap[1]) / r**3
    return P, T, n, k, at, dat


def chart_map(curve, fields, contact, t, theta):
    """F(t, theta) with its first partials, by the chain rule.

    Uses Theta = theta + t^2 c(theta)/2, the quadratic endpoint model.
    """
    t = np.asarray(t, dtype=float)
    theta = np.asarray(theta, dtype=float)
    t, theta = np.broadcast_arrays(t, theta)
    shape = t.shape
    t, theta = t.ravel(), theta.ravel()
    if curve.closed or contact is None:
        c = np.zeros_like(theta)
        cp = 0.0
    else:
        c = (contact.kt2 - contact.kt1) * theta + contact.kt1
        cp = contact.kt2 - contact.kt1
    Th = theta + 0.5 * t**2 * c
    Th_t = t * c
    Th_th = 1.0 + 0.5 * t**2 * cp
    P, T, n, k, at, dat = _chart_frame(curve, fields, Th)
    v = at * n
    dv = dat * n - k * at * T
    F = P + t * v
    Ft = T * Th_t + v + t * dv * Th_t
    Fth = Th_th * (T + t * dv)
    rs = lambda x: x.reshape((2,) + shape)
    return rs(F), rs(Ft), rs(Fth)


def metric_direct(curve, fields, t, theta, contact=None, radius: float = np.inf) -> MetricSample:
    """Exact Gram quantities of the chart at (t, theta)."""
    if np.any(np.abs(np.asarray(t)) > radius):
        raise GeometryError("t outside the chart radius")
    F, Ft, Fth = chart_map(curve, fields, contact, t, theta)
    a1 = fields["a1"](F[0], F[1])
    a2 = fields["a2"](F[0], F[1])
    g11 = Ft[0]**2 + Ft[1]**2
    g12 = Ft[0] * Fth[0] + Ft[1] * Fth[1]
    g22 = Fth[0]**2 + Fth[1]**2
    det = Ft[0] * Fth[1] - Ft[1] * Fth[0]
    return MetricSample(
        g11=g11, g12=g12, g22=g22, g=g11 * g22 - g12**2,
        gt11=a1 * Fth[1]**2 + a2 * Fth[0]**2,
        gt12=a1 * Fth[1] * Ft[1] + a2 * Fth[0] * Ft[0],
        gt22=a1 * Ft[1]**2 + a2 * Ft[0]**2,
        det=det, F=F, Ft=Ft, Fth=Fth)
