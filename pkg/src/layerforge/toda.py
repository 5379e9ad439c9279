"""Reduced one-dimensional systems for the layer locations.

The Jacobi-Toda system couples N location functions f_1 < ... < f_N on
[0, 1] through nearest-neighbour exponentials,

    eps^2 vs [H1 f_j'' + H1' f_j' + q f_j] - exp(-beta (f_j - f_{j-1}))
        + exp(-beta (f_{j+1} - f_j)) = eps^2 forcing_j,

with f_0 = -inf, f_{N+1} = +inf and Robin ends.  Two solvers are provided:
Newton collocation on the full system, and the constructive splitting
(log-scale spacing rho, algebraic offsets, modal decomposition, boundary
correctors, fixed point for the remainder).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg
from sklearn.base import BaseEstimator

from . import _numerics as nm

__all__ = [
    "TodaError", "ResonanceError", "rho_epsilon", "rho_asymptotic", "cluster_offsets",
    "toda_matrix", "operator_matrix", "solve_linear_jacobi", "solve_resonant_linear",
    "boundary_correctors", "TodaProblem", "TodaSolution", "toda_residual",
    "solve_toda_direct", "solve_toda_constructive", "DirectTodaSolver",
    "ConstructiveTodaSolver", "kappa_of", "lambda_star", "is_admissible",
    "gap_sequence", "ResonanceData", "solve_e_equation", "solve_e_system", "LinearSolve",
]


class TodaError(RuntimeError):
    pass


class ResonanceError(TodaError):
    pass


# ------------------------------------------------------------ scalar laws

def rho_epsilon(eps, c, maxiter: int = 100, tol: float = 1e-12):
    """Solve exp(-rho) = eps^2 c rho for rho > 0 (nodewise for a table c)."""
    c = np.asarray(c, dtype=float)
    if not 0 < eps <= 0.2:
        raise TodaError("eps must lie in (0, 0.2]")
    if np.any(c <= 0):
        raise TodaError("c must be positive")
    C = np.log(eps**2 * c)
    rho = np.full_like(C, 2.0 * abs(np.log(eps)))
    for it in range(maxiter):
        g = rho + np.log(rho) + C
        step = g / (1.0 + 1.0 / rho)
        new = rho - step
        new = np.where(new <= 0, 0.5 * rho, new)
        rho = new
        if np.max(np.abs(step)) < 1e-15 * np.max(rho):
            break
    else:
        raise TodaError("rho equation did not converge")
    res = np.abs(np.exp(-rho) - eps**2 * c * rho)
    if np.max(res) > tol:
        raise TodaError(f"rho residual {np.max(res):.3g} above tolerance")
    return rho


def rho_asymptotic(eps, c):
    L = 2.0 * abs(np.log(eps))
    return L - np.log(L) - np.log(np.asarray(c, dtype=float))


def kappa_of(eps):
    L = 2.0 * abs(np.log(eps))
    return 1.0 / (L - np.log(L))


def cluster_offsets(N: int):
    """O(1) offsets of a cluster and the weights a_0..a_N.

    a_n = a_{n-1} - (n - (N+1)/2), a_0 = a_N = 0; neighbouring offsets
    differ by -ln a_n and sum to zero.
    """
    if N < 1:
        raise TodaError("N must be at least 1")
    a = np.zeros(N + 1)
    for n in range(1, N + 1):
        a[n] = a[n - 1] - (n - 0.5 * (N + 1))
    a[N] = 0.0 if abs(a[N]) < 1e-12 else a[N]
    inner = a[1:N]
    if np.any(inner <= 0):
        raise TodaError("nonpositive interaction weight")
    f = np.concatenate([[0.0], np.cumsum(-np.log(inner))])
    f -= f.mean()
    return f, a


def toda_matrix(a_inner):
    """Tridiagonal matrix of the linearised cluster and its eigenbasis.

    Returns (A, lam, P) with P^T A P = diag(lam), lam sorted descending and
    the last column of P equal to the constant unit vector.
    """
    a_inner = np.asarray(a_inner, dtype=float)
    N = len(a_inner) + 1
    a = np.concatenate([[0.0], a_inner, [0.0]])
    A = np.diag(a[:-1] + a[1:])
    if N > 1:
        A -= np.diag(a_inner, 1) + np.diag(a_inner, -1)
    lam, P = linalg.eigh(A)
    order = np.argsort(-lam, kind="stable")
    lam, P = lam[order], P[:, order]
    lam[-1] = 0.0 if abs(lam[-1]) < 1e-12 else lam[-1]
    P[:, -1] = 1.0 / np.sqrt(N)
    # re-orthonormalise the other columns against the exact null vector
    for j in range(N - 1):
        v = P[:, j] - (P[:, j] @ P[:, -1]) * P[:, -1]
        P[:, j] = v / np.linalg.norm(v)
        if P[np.argmax(np.abs(P[:, j])), j] < 0:
            P[:, j] = -P[:, j]
    return A, lam, P


def lambda_star(lambda0, ell):
    return lambda0 * ell**2 / np.pi**2


def is_admissible(eps, lam_star, c_tilde):
    """Gap condition |lam* - j^2 eps^2| >= c_tilde eps for all j >= 1."""
    J = int(np.ceil(np.sqrt(lam_star) / eps)) + 1
    j = np.arange(1, J + 1)
    return bool(np.all(np.abs(lam_star - j**2 * eps**2) >= c_tilde * eps))


@dataclass
class ResonanceData:
    lambda0: float
    ell: float
    lam_star: float
    c_tilde: float
    admissible: list
    candidates: int

    def summary(self):
        return {"lambda0": self.lambda0, "ell": self.ell, "lambda_star": self.lam_star,
                "c_tilde": self.c_tilde, "admissible": list(self.admissible),
                "candidates": self.candidates, "empty": len(self.admissible) == 0}


def gap_sequence(eps_min, eps_max, lam_star, c_tilde, n: int = 400, lambda0=np.nan, ell=np.nan):
    """Admissible epsilons on a log-spaced candidate grid."""
    if not 0 < eps_min < eps_max:
        raise TodaError("need 0 < eps_min < eps_max")
    if lam_star <= 0:
        raise TodaError("lambda* must be positive")
    cand = np.geomspace(eps_min, eps_max, n)
    ok = [float(e) for e in cand if is_admissible(e, lam_star, c_tilde)]
    return ResonanceData(float(lambda0), float(ell), float(lam_star), float(c_tilde), ok, n)


# ------------------------------------------------------- linear operators

def operator_matrix(theta, c2, c1, c0, bc="neumann"):
    """Sparse second-order matrix of c2 v'' + c1 v' + c0 v.

    ``bc`` is "neumann", "periodic" or ("robin", (b1, b2, b6, b7)) for
    b1 v'(0) - b2 v(0) = g0, b6 v'(1) - b7 v(1) = g1.  Boundary conditions
    enter through ghost nodes.  Returns (A, ghost) where ghost(g0, g1) is
    the vector added to A v by inhomogeneous boundary data.
    """
    theta = np.asarray(theta, float)
    h = theta[1] - theta[0]
    n = len(theta)
    c2, c1, c0 = (np.broadcast_to(np.asarray(c, float), (n,)) for c in (c2, c1, c0))
    lo = c2 / h**2 - c1 / (2 * h)
    di = -2 * c2 / h**2 + c0
    up = c2 / h**2 + c1 / (2 * h)
    if bc == "periodic":
        m = n - 1
        A = sparse.diags([di[:m], up[:m - 1], lo[1:m]], [0, 1, -1], format="lil")
        A[0, m - 1] = lo[0]
        A[m - 1, 0] = up[m - 1]
        return A.tocsr(), (lambda g0=0.0, g1=0.0: np.zeros(m))
    if bc == "neumann":
        b1, b2, b6, b7 = 1.0, 0.0, 1.0, 0.0
    else:
        kind, (b1, b2, b6, b7) = bc
        if kind != "robin":
            raise TodaError(f"unknown boundary condition {bc!r}")
    d = di.copy()
    u = up[:-1].copy()
    l = lo[1:].copy()
    d[0] -= lo[0] * 2 * h * b2 / b1
    u[0] += lo[0]
    d[-1] += up[-1] * 2 * h * b7 / b6
    l[-1] += up[-1]
    A = sparse.diags([d, u, l], [0, 1, -1], format="csr")

    def ghost(g0=0.0, g1=0.0):
        g = np.zeros(n)
        g[0] = -lo[0] * 2 * h * g0 / b1
        g[-1] = up[-1] * 2 * h * g1 / b6
        return g
    return A, ghost


def _weighted_sigma_min(A, theta, periodic):
    h = theta[1] - theta[0]
    m = A.shape[0]
    w = np.full(m, h)
    if not periodic:
        w[0] = w[-1] = 0.5 * h
    sw = np.sqrt(w)
    B = (sw[:, None] * A.toarray()) / sw[None, :]
    return float(linalg.svdvals(B)[-1])


def _l2(y, theta, periodic=False):
    return float(np.sqrt(nm.integrate_uniform(np.asarray(y) ** 2, theta[1] - theta[0], periodic)))


@dataclass
class LinearSolve:
    """Solution of a linear two-point problem with diagnostics."""
    v: np.ndarray
    sigma_min: float
    bound_constant: float
    info: dict = field(default_factory=dict)


def solve_linear_jacobi(theta, H1, tau1, tau2, rhs, bc="neumann", bc_values=(0.0, 0.0),
                        singular_tol: float = 1e-10) -> LinearSolve:
    """Solve H1 v'' + tau1 v' + tau2 v = rhs with the given end conditions."""
    periodic = bc == "periodic"
    A, ghost = operator_matrix(theta, H1, tau1, tau2, bc)
    b = np.asarray(rhs, float)
    b = b[:-1] if periodic else b
    b = b - ghost(*bc_values)
    smin = _weighted_sigma_min(A, theta, periodic)
    if smin < singular_tol * max(1.0, np.max(np.abs(H1))):
        raise TodaError(f"degenerate linear operator (sigma_min {smin:.3g})")
    v = splinalg.spsolve(A.tocsc(), b)
    if periodic:
        v = np.concatenate([v, v[:1]])
    nr = _l2(rhs, theta, periodic)
    C = _l2(v, theta, periodic) / nr if nr > 0 else 0.0
    return LinearSolve(v, smin, C)


def solve_resonant_linear(theta, kappa, lam, Pi, H1, tau1, tau2, rhs, eps=None, power: float = 2.0,
                          bc="neumann", bc_values=(0.0, 0.0), threshold: Optional[float] = None) -> LinearSolve:
    """Solve kappa [H1 v'' + tau1 v' + tau2 v] + lam Pi v = rhs with Neumann ends.

    Refuses when the weighted smallest singular value falls below
    ``threshold`` (default eps**power).
    """
    periodic = bc == "periodic"
    c0 = kappa * np.asarray(tau2, float) + lam * np.asarray(Pi, float)
    A, ghost = operator_matrix(theta, kappa * np.asarray(H1, float), kappa * np.asarray(tau1, float), c0, bc)
    smin = _weighted_sigma_min(A, theta, periodic)
    if threshold is None:
        threshold = (eps**power) if eps is not None else 1e-10
    if smin < threshold:
        raise ResonanceError(f"near-resonant system: sigma_min {smin:.3g} < {threshold:.3g}")
    b = np.asarray(rhs, float)
    b = (b[:-1] if periodic else b) - ghost(*bc_values)
    v = splinalg.spsolve(A.tocsc(), b)
    if periodic:
        v = np.concatenate([v, v[:1]])
    nr = _l2(rhs, theta, periodic)
    lnf = np.sqrt(abs(np.log(eps))) if eps is not None else 1.0
    C = _l2(v, theta, periodic) / (lnf * nr) if nr > 0 else 0.0
    return LinearSolve(v, smin, C, {"threshold": threshold})


class _Factored:
    """Reusable LU factorisation of a fixed operator."""

    def __init__(self, A, periodic):
        self.lu = splinalg.splu(A.tocsc())
        self.periodic = periodic

    def __call__(self, b):
        v = self.lu.solve(b[:-1] if self.periodic else b)
        return np.concatenate([v, v[:1]]) if self.periodic else v


def _cutoff(theta, start=0.125, width=0.125):
    s, d1, d2 = nm.smooth_step_derivs((theta - start) / width)
    return 1.0 - s, -d1 / width, -d2 / width**2


def boundary_correctors(theta, lam, kappa, Pi, G1, G2, return_derivatives=False):
    """Oscillatory boundary profiles carrying prescribed end slopes.

    u = chi l G1/sqrt(Pi(0)) sin(vt/l) - (1-chi) l G2/sqrt(Pi(1)) sin((vt1 - vt)/l),
    with l = sqrt(kappa/lam), vt = int_0^theta sqrt(Pi), so that
    u'(0) = G1 and u'(1) = G2.
    """
    theta = np.asarray(theta, float)
    if lam <= 0:
        raise TodaError("boundary correctors need a positive eigenvalue")
    h = theta[1] - theta[0]
    sP = np.sqrt(np.asarray(Pi, float) * np.ones_like(theta))
    vt = nm.cumulative_uniform(sP, h)
    vt1 = sP
    vt2 = nm.derivative(sP, h)
    l0 = vt[-1]
    ell = np.sqrt(kappa / lam)
    chi, chi1, chi2 = _cutoff(theta)
    A1 = ell * G1 / sP[0]
    A2 = ell * G2 / sP[-1]
    s1, c1 = np.sin(vt / ell), np.cos(vt / ell)
    s2, c2 = np.sin((l0 - vt) / ell), np.cos((l0 - vt) / ell)
    S1 = A1 * s1
    S1p = A1 * c1 * vt1 / ell
    S1pp = A1 * (-s1 * vt1**2 / ell**2 + c1 * vt2 / ell)
    S2 = A2 * s2
    S2p = -A2 * c2 * vt1 / ell
    S2pp = A2 * (-s2 * vt1**2 / ell**2 - c2 * vt2 / ell)
    u = chi * S1 - (1 - chi) * S2
    if not return_derivatives:
        return u
    du = chi1 * S1 + chi * S1p + chi1 * S2 - (1 - chi) * S2p
    d2u = chi2 * S1 + 2 * chi1 * S1p + chi * S1pp + chi2 * S2 + 2 * chi1 * S2p - (1 - chi) * S2pp
    return u, du, d2u


# ------------------------------------------------------------ the system

@dataclass
class TodaProblem:
    """Coefficient tables of a Jacobi-Toda boundary-value problem."""
    theta: np.ndarray
    N: int
    eps: float
    varsigma: np.ndarray
    beta: np.ndarray
    H1: np.ndarray
    dH1: np.ndarray
    q: np.ndarray
    tau1: np.ndarray
    tau2: np.ndarray
    b1: float = 1.0
    b2: float = 0.0
    b6: float = 1.0
    b7: float = 0.0
    K1: float = 0.0
    K2: float = 0.0
    periodic: bool = False
    forcing: Optional[np.ndarray] = None
    alpha2: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.theta)
        for name in ("varsigma", "beta", "H1", "dH1", "q", "tau1", "tau2"):
            setattr(self, name, np.broadcast_to(np.asarray(getattr(self, name), float), (n,)).copy())
        if self.N < 1:
            raise TodaError("N must be at least 1")
        if self.forcing is not None:
            self.forcing = np.broadcast_to(np.asarray(self.forcing, float), (self.N, n)).copy()

    @classmethod
    def from_chart(cls, chart, report, profile, N, eps, forcing=None, alpha2=None):
        from .profiles import interaction_constants
        rho1, rho2 = (profile.rho or interaction_constants(profile))[:2]
        vs = rho1 / (chart.beta * rho2 * chart.h[0])
        return cls(theta=chart.theta, N=int(N), eps=float(eps), varsigma=vs, beta=chart.beta,
                   H1=report.H1, dH1=report.dH1, q=report.q, tau1=report.tau1, tau2=report.tau2,
                   b1=report.b1, b2=report.b2, b6=report.b6, b7=report.b7, K1=report.K1, K2=report.K2,
                   periodic=chart.closed, forcing=forcing, alpha2=alpha2)

    @property
    def bc(self):
        return "periodic" if self.periodic else ("robin", (self.b1, self.b2, self.b6, self.b7))

    @property
    def c_rho(self):
        return self.varsigma * self.tau2 / self.beta

    def rho(self):
        """Spacing table; identically zero for a single layer."""
        if self.N == 1:
            return np.zeros_like(self.theta)
        return rho_epsilon(self.eps, self.c_rho)


@dataclass
class TodaSolution:
    """Layer locations with diagnostics."""
    theta: np.ndarray
    eps: float
    f: np.ndarray
    residual: float
    boundary_residual: float
    min_gap: float
    max_gap: float
    center: np.ndarray
    rho: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def N(self):
        return self.f.shape[0]

    def to_json(self):
        return {"epsilon": self.eps, "N": int(self.N), "method": self.method,
                "theta": self.theta.tolist(), "f": self.f.tolist(), "residual": self.residual,
                "boundary_residual": self.boundary_residual, "min_gap": self.min_gap,
                "max_gap": self.max_gap, "rho_eps": self.rho.tolist(),
                "max_abs_center": float(np.max(np.abs(self.center))),
                "diagnostics": self.diagnostics}


def _exp_terms(F, beta):
    """Interaction vector -e^{-b(f_j - f_{j-1})} + e^{-b(f_{j+1} - f_j)} and its pieces."""
    E = np.exp(-beta * np.diff(F, axis=0))  # (N-1, n)
    out = np.zeros_like(F)
    out[1:] -= E
    out[:-1] += E
    return out, E


def _op(prob: TodaProblem):
    q = prob.q + (prob.alpha2 if prob.alpha2 is not None else 0.0)
    return operator_matrix(prob.theta, prob.H1, prob.dH1, q, prob.bc)[0]


def toda_residual(prob: TodaProblem, F):
    """Discrete residual of the system at every node (shape (N, n))."""
    F = np.asarray(F, float)
    A = _op(prob)
    per = prob.periodic
    core = F[:, :-1] if per else F
    e2 = prob.eps**2
    vs = prob.varsigma[:-1] if per else prob.varsigma
    beta = prob.beta[:-1] if per else prob.beta
    lin = e2 * vs * (A @ core.T).T
    ex, _ = _exp_terms(core, beta)
    R = lin + ex
    if prob.forcing is not None:
        R -= e2 * (prob.forcing[:, :-1] if per else prob.forcing)
    if per:
        R = np.concatenate([R, R[:, :1]], axis=1)
    return R


def _boundary_residual(prob, F):
    if prob.periodic:
        return 0.0
    h = prob.theta[1] - prob.theta[0]
    d = nm.derivative(F, h, 1, accuracy=2)
    r0 = prob.b1 * d[:, 0] - prob.b2 * F[:, 0]
    r1 = prob.b6 * d[:, -1] - prob.b7 * F[:, -1]
    return float(max(np.max(np.abs(r0)), np.max(np.abs(r1))))


def _finish(prob, F, rho, method, diag):
    R = toda_residual(prob, F)
    gaps = np.diff(F, axis=0)
    return TodaSolution(theta=prob.theta, eps=prob.eps, f=F, residual=float(np.max(np.abs(R))),
                        boundary_residual=_boundary_residual(prob, F),
                        min_gap=float(gaps.min()) if len(gaps) else np.inf,
                        max_gap=float(gaps.max()) if len(gaps) else np.inf,
                        center=F.sum(axis=0), rho=rho, method=method, diagnostics=diag)


def _initial_guess(prob, rho):
    N = prob.N
    fdd, _ = cluster_offsets(N)
    n = np.arange(1, N + 1) - 0.5 * (N + 1)
    return (n[:, None] * rho[None, :] + fdd[:, None]) / prob.beta[None, :]


def solve_toda_direct(prob: TodaProblem, initial=None, tol: float = 1e-10, maxiter: int = 60) -> TodaSolution:
    """Damped Newton on the collocated system.

    Converged when the max residual is at most tol * eps^2.  Steps that
    would bring any scaled gap beta (f_{j+1} - f_j) below |ln eps| are
    halved; so are steps that do not reduce the residual.
    """
    rho = prob.rho()
    F = _initial_guess(prob, rho) if initial is None else np.array(initial, float)
    N, n = F.shape
    per = prob.periodic
    A = _op(prob)
    m = A.shape[0]
    e2 = prob.eps**2
    vs = prob.varsigma[:m]
    beta = prob.beta[:m]
    L = sparse.kron(sparse.identity(N), sparse.diags(e2 * vs) @ A, format="csr")
    floor = abs(np.log(prob.eps))
    target = tol * e2

    def resid(Fc):
        lin = e2 * vs * (A @ Fc.T).T
        ex, E = _exp_terms(Fc, beta)
        R = lin + ex
        if prob.forcing is not None:
            R = R - e2 * prob.forcing[:, :m]
        return R, E

    Fc = F[:, :m].copy()
    R, E = resid(Fc)
    history = [float(np.max(np.abs(R)))]
    for it in range(maxiter):
        if history[-1] <= target:
            break
        # Jacobian of the interaction terms (block tridiagonal in j, diagonal in theta)
        rows, cols, vals = [], [], []
        idx = lambda j: j * m + np.arange(m)
        for j in range(N - 1):
            dE = beta * E[j]
            # row j gets +E_j ; row j+1 gets -E_j; E_j depends on f_{j+1} - f_j
            for r, sgn in ((j, 1.0), (j + 1, -1.0)):
                rows += [idx(r), idx(r)]
                cols += [idx(j + 1), idx(j)]
                vals += [-sgn * dE, sgn * dE]
        J = L
        if rows:
            J = L + sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                      shape=L.shape)
        delta = splinalg.spsolve(J.tocsc(), -R.ravel()).reshape(N, m)
        lam = 1.0
        for _ in range(40):
            trial = Fc + lam * delta
            ok = N == 1 or np.min(beta * np.diff(trial, axis=0)) >= floor
            if ok:
                Rt, Et = resid(trial)
                if np.max(np.abs(Rt)) < history[-1] or np.max(np.abs(Rt)) <= target:
                    break
            lam *= 0.5
        else:
            raise TodaError("line search failed (ordering or residual)")
        Fc, R, E = trial, Rt, Et
        history.append(float(np.max(np.abs(R))))
    else:
        if history[-1] > target:
            raise TodaError(f"Newton did not converge: residual {history[-1]:.3g}")
    F = np.concatenate([Fc, Fc[:, :1]], axis=1) if per else Fc
    return _finish(prob, F, rho, "direct", {"newton_iterations": len(history) - 1,
                                            "residual_history": history})


def solve_toda_constructive(prob: TodaProblem, tol: float = 1e-10, maxiter: int = 200,
                            admissible_tol: float = 1e-6, power: float = 2.0) -> TodaSolution:
    """Constructive splitting of the system (see module docstring).

    f = (1/beta) [rho (n - (N+1)/2) + offsets + P (u_hat + w + u_check)],
    with u_hat the boundary correctors, w the forced linear modes and
    u_check the fixed point of the nonlinear remainder.
    """
    if abs(prob.K1) > admissible_tol or abs(prob.K2) > admissible_tol:
        raise TodaError(f"admissibility violated (K1={prob.K1:.3g}, K2={prob.K2:.3g})")
    N, eps = prob.N, prob.eps
    if N > 1 and np.any(prob.tau2 <= 0):
        raise TodaError("tau2 must be positive")
    th = prob.theta
    h = th[1] - th[0]
    per = prob.periodic
    rho = prob.rho()
    kappa = kappa_of(eps)
    Pi = kappa * prob.tau2 * rho
    fdd, a = cluster_offsets(N)
    _, lam, P = toda_matrix(a[1:N])
    cN = np.arange(1, N + 1) - 0.5 * (N + 1)
    D = lambda y, k=1: nm.derivative(y, h, k, periodic=per)
    rp, rpp = D(rho), D(rho, 2)
    H1, t1, t2 = prob.H1, prob.tau1, prob.tau2
    g = -cN[:, None] * (H1 * rpp + t1 * rp)[None, :] - t2[None, :] * fdd[:, None]
    if prob.forcing is not None:
        g = g + (prob.beta / prob.varsigma)[None, :] * prob.forcing
    if prob.alpha2 is not None:
        raise TodaError("the constructive solver does not model the alpha2 term")
    gm = P.T @ g
    bc = "periodic" if per else "neumann"
    if per:
        G1 = G2 = np.zeros(N)
    else:
        G1 = P.T @ (-cN * rp[0])
        G2 = P.T @ (-cN * rp[-1])
    uhat = np.zeros((N, len(th)))
    ghat = np.zeros_like(uhat)
    solvers = []
    smins = []
    for k in range(N):
        if lam[k] > 1e-12:
            A, _ = operator_matrix(th, kappa * H1, kappa * t1, kappa * t2 + lam[k] * Pi, bc)
            smin = _weighted_sigma_min(A, th, per)
            if smin < eps**power:
                raise ResonanceError(f"mode {k + 1} near resonance: sigma_min {smin:.3g}")
            if not per:
                u, du, d2u = boundary_correctors(th, lam[k], kappa, Pi, G1[k], G2[k], True)
                uhat[k] = u
                ghat[k] = -kappa * (H1 * d2u + t1 * du + t2 * u) - lam[k] * Pi * u
        else:
            A, _ = operator_matrix(th, H1, t1, t2, bc)
            smin = _weighted_sigma_min(A, th, per)
            if smin < 1e-10:
                raise TodaError("degenerate zero mode")
        smins.append(smin)
        solvers.append(_Factored(A, per))
    wt = np.zeros_like(uhat)
    for k in range(N):
        if lam[k] > 1e-12:
            wt[k] = solvers[k](kappa * gm[k] + ghat[k])
        else:
            wt[k] = solvers[k](gm[k])

    def nonlin(U):
        Ft = P @ U
        out = np.zeros_like(Ft)
        if N > 1:
            d = np.diff(Ft, axis=0)
            E = np.exp(-d) - 1.0 + d
            out[1:] += a[1:N, None] * E
            out[:-1] -= a[1:N, None] * E
        return P.T @ out

    uc = np.zeros_like(uhat)
    incs = []
    for it in range(maxiter):
        Nl = nonlin(uhat + wt + uc)
        new = np.zeros_like(uc)
        for k in range(N):
            if lam[k] > 1e-12:
                new[k] = solvers[k](Pi * Nl[k])
            else:
                new[k] = solvers[k](Pi * Nl[k] / kappa)
        inc = float(np.max(np.abs(new - uc)))
        uc = new
        incs.append(inc)
        if inc <= tol:
            break
        if len(incs) > 3 and incs[-1] > incs[-2] > incs[-3]:
            raise TodaError(f"fixed point does not contract (factor {incs[-1] / incs[-2]:.3g})")
    else:
        raise TodaError("fixed point did not converge")
    U = uhat + wt + uc
    F = (cN[:, None] * rho[None, :] + fdd[:, None] + P @ U) / prob.beta[None, :]
    factor = incs[-1] / incs[-2] if len(incs) > 1 and incs[-2] > 0 else 0.0
    diag = {"fixed_point_iterations": len(incs), "contraction_factor": float(factor),
            "kappa": float(kappa), "eigenvalues": lam.tolist(), "sigma_min_modes": smins,
            "uhat_l2": [_l2(u, th, per) for u in uhat],
            "uhat_bound_constant": [_l2(u, th, per) * np.sqrt(abs(np.log(eps))) for u in uhat]}
    return _finish(prob, F, rho, "constructive", diag)


class DirectTodaSolver(BaseEstimator):
    """Estimator wrapper: ``fit(problem)`` sets ``solution_`` and ``f_``."""

    def __init__(self, tol=1e-10, maxiter=60):
        self.tol = tol
        self.maxiter = maxiter

    def fit(self, problem, y=None, initial=None):
        self.solution_ = solve_toda_direct(problem, initial=initial, tol=self.tol, maxiter=self.maxiter)
        self.f_ = self.solution_.f
        return self


class ConstructiveTodaSolver(BaseEstimator):
    """Estimator wrapper around the constructive splitting."""

    def __init__(self, tol=1e-10, maxiter=200, admissible_tol=1e-6, power=2.0):
        self.tol = tol
        self.maxiter = maxiter
        self.admissible_tol = admissible_tol
        self.power = power

    def fit(self, problem, y=None):
        self.solution_ = solve_toda_constructive(problem, tol=self.tol, maxiter=self.maxiter,
                                                 admissible_tol=self.admissible_tol, power=self.power)
        self.f_ = self.solution_.f
        return self


# ----------------------------------------------------------- e-equation

def solve_e_system(theta, eps, c2, c1, c0, forcing, b5=0.0, b6=0.0, power: float = 2.0):
    """Solve -eps^2 c2 e'' - eps^2 c1 e' - c0 e = forcing, e' + b e = 0 at the ends."""
    theta = np.asarray(theta, float)
    bc = ("robin", (1.0, -b5, 1.0, -b6))
    A, _ = operator_matrix(theta, -eps**2 * np.asarray(c2, float), -eps**2 * np.asarray(c1, float),
                           -np.asarray(c0, float), bc)
    smin = _weighted_sigma_min(A, theta, False)
    thr = eps**power * eps**2
    if smin < thr:
        raise ResonanceError(f"near-resonant e-equation: sigma_min {smin:.3g}")
    g = np.asarray(forcing, float) * np.ones_like(theta)
    e = splinalg.spsolve(A.tocsc(), g)
    h = theta[1] - theta[0]
    d1 = nm.derivative(e, h, 1)
    d2 = nm.derivative(e, h, 2)
    norm = np.max(np.abs(e)) + eps * _l2(d1, theta) + eps**2 * _l2(d2, theta)
    gn = _l2(g, theta)
    C = eps * norm / gn if gn > 0 else 0.0
    return LinearSolve(e, smin, C, {"norm_starstar": float(norm), "threshold": thr})


def solve_e_equation(chart, profile, eps, forcing, power: float = 2.0) -> LinearSolve:
    """The transversal-mode equation along the curve for user forcing."""
    h = chart.h
    beta, alpha = chart.beta, chart.alpha
    lb = chart.d(beta) / beta
    la = chart.d(alpha) / alpha
    hbar5 = (2 * la + h[3]) / beta**2 - 0.5 * (h[1] * lb / beta**2 + h[5] / beta**2)
    alt = beta**2 * hbar5
    c0 = beta**2 * h[0] * profile.lambda0
    return solve_e_system(chart.theta, eps, h[1], alt, c0, forcing, la[0], la[-1], power)
