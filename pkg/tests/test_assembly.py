"""Fermi inversion, the assembled approximation and its PDE residual."""
import numpy as np
import pytest
from sklearn.base import clone

from layerforge import toda as T
from layerforge.assembly import (AssemblyError, LayerAnsatz, build_ansatz, cutoff, fermi_inverse,
                                 pde_residual, resonance_constants, resonance_profile,
                                 spacing_report, transects)
from layerforge.geodesic import second_variation
from layerforge.geometry import chart_map

from conftest import straight_chart


def layered(chart, profile, N, eps, **toggles):
    rep = second_variation(chart, compute_sigma=False)
    sol = T.solve_toda_direct(T.TodaProblem.from_chart(chart, rep, profile, N, eps))
    return build_ansatz(chart, profile, sol, eps, **toggles), sol


@pytest.fixture(scope="module")
def stationary_chart():
    return straight_chart(a1="1+0.2*y1", a2="1+0.2*y1", V="2+(-2/15)*y1-y1^2")


def test_cutoff_profile():
    d = 0.1
    t = np.array([0.0, 0.3, 0.45, 0.6, 1.0])
    c = cutoff(t, d)
    assert c[0] == 1 and c[1] == 1 and c[3] == 0 and c[4] == 0
    assert 0 < c[2] < 1
    assert np.allclose(cutoff(-t, d), c)


@pytest.mark.parametrize("which", ["curved", "circle"])
def test_fermi_inverse_round_trip(which, curved, circle):
    ch = curved[3] if which == "curved" else circle[2]
    rng = np.random.default_rng(3)
    t = rng.uniform(-0.05, 0.05, 200)
    th = rng.uniform(0.05, 0.95, 200)
    F, _, _ = chart_map(ch.curve, ch.fields, ch.contact, t, th)
    t2, th2, inside = fermi_inverse(ch, F, band=0.1)
    assert np.all(inside)
    assert np.max(np.abs(t2 - t)) < 1e-10 and np.max(np.abs(th2 - th)) < 1e-10


def test_fermi_inverse_marks_far_points(vq_chart):
    Y = np.array([[0.0, 0.9], [0.5, 0.5]])
    t, th, inside = fermi_inverse(vq_chart, Y, band=0.2)
    assert inside[0] and not inside[1]


def test_flat_single_layer_is_exact_profile(flat_chart, profile3):
    """On the flat chart u = w(y1/eps) wherever the cutoff equals one."""
    eps = 0.04
    ans, _ = layered(flat_chart, profile3, 1, eps)
    y1 = np.linspace(-0.3, 0.3, 61)
    Y = np.column_stack([y1, np.full_like(y1, 0.4)])
    assert np.max(np.abs(ans.predict(Y) - profile3.w(y1 / eps))) < 1e-12


def test_two_layer_crests(vq_chart, profile3):
    eps = 0.025
    ans, sol = layered(vq_chart, profile3, 2, eps)
    rows = transects(ans, thetas=(0.5,), half_width=0.5, n=20001)
    t, u = rows[:, 1], rows[:, 4]
    assert np.all(u >= 0)
    mid = np.argmin(np.abs(ans.chart_.theta - 0.5))
    for fj in sol.f[:, mid]:
        near = np.abs(t - eps * fj) < eps
        k = np.argmax(np.where(near, u, -1))
        assert t[k] == pytest.approx(eps * fj, abs=2e-4)
        # alpha w(0) = sqrt(2) sqrt(2) on this chart
        assert u[k] == pytest.approx(2.0, rel=2e-2)


def test_ansatz_estimator_api(vq_chart, profile3):
    ans, sol = layered(vq_chart, profile3, 1, 0.04)
    params = ans.get_params()
    assert params["eps"] == 0.04 and params["omega_corrections"] is False
    fresh = clone(ans)
    assert not hasattr(fresh, "chart_")
    with pytest.raises(AssemblyError):
        LayerAnsatz(eps=0.05).fit(vq_chart, profile=profile3, solution=sol)
    with pytest.raises(AssemblyError):
        LayerAnsatz(eps=0.04).fit(vq_chart)


def test_residual_refuses_coarse_grid(flat_chart, profile3):
    ans, _ = layered(flat_chart, profile3, 1, 0.04)
    with pytest.raises(AssemblyError, match="coarse"):
        pde_residual(ans, h=0.04 / 4)


def test_flat_residual_converges_with_grid(flat_chart, profile3):
    """The flat single layer is exact; what remains is discretisation error."""
    ans, _ = layered(flat_chart, profile3, 1, 0.04)
    sups = [pde_residual(ans, h=0.04 / m).sup_R_band for m in (8, 16, 32)]
    rates = np.log2(np.array(sups[:-1]) / np.array(sups[1:]))
    assert np.all(rates > 1.8)
    r = pde_residual(ans)
    # symmetric in y1 -> -y1 and y2-independent in the band
    R = np.where(r.band, r.R, 0.0)
    assert np.nanmax(np.abs(R - R[::-1])) < 1e-10
    assert r.sup_boundary_flux < 1e-6


def test_omega_corrections_reduce_residual(stationary_chart, profile3):
    eps = 0.04
    lead, _ = layered(stationary_chart, profile3, 1, eps)
    corr, _ = layered(stationary_chart, profile3, 1, eps, omega_corrections=True)
    r0 = pde_residual(lead, richardson=True)
    r1 = pde_residual(corr, richardson=True)
    assert r1.sup_R_band < 0.5 * r0.sup_R_band
    assert r0.slope_estimate > 1.5 and r1.slope_estimate > 1.5


def test_residual_report_rows(flat_chart, profile3):
    ans, _ = layered(flat_chart, profile3, 1, 0.08)
    r = pde_residual(ans)
    rows = r.to_rows()
    assert rows.shape == (r.y1.size * r.y2.size, 4)
    s = r.summary()
    assert s["eps"] == 0.08 and s["richardson"] is False and np.isnan(s["slope_estimate"])
    assert r.relative_sup > 0


# ------------------------------------------------------------ resonance

def test_resonance_profile_trivial_and_strip_variable():
    th = np.linspace(0, 1, 201)
    d, A, ups = resonance_profile(0.0, 0.0, 0.03, 3.0, 1.0, 1.0, th)
    assert np.all(A == 0)
    assert np.allclose(d, th, atol=1e-12)
    assert ups(10.0) == pytest.approx(10.0, abs=1e-9)


def test_resonance_profile_end_slopes():
    th = np.linspace(0, 1, 4001)
    eps, c0, c1 = 0.03, 0.4, -0.2
    d, A, _ = resonance_profile(c0, c1, eps, 3.0, 1.0, 1.0, th)
    k = np.sqrt(3.0) / eps
    h = th[1] - th[0]
    dA = np.gradient(A, h, edge_order=2)
    # A' = c0 k/sqrt(lambda0) at 0 and c1 k/sqrt(lambda0) at the far end
    assert dA[0] * eps == pytest.approx(c0, rel=2e-2)
    assert dA[-1] * eps == pytest.approx(c1, rel=2e-2)


def test_resonance_profile_refuses_resonant_eps():
    ell, lam0 = 1.0, 3.0
    eps = np.sqrt(lam0) * ell / (20 * np.pi)
    with pytest.raises(AssemblyError, match="resonant"):
        resonance_profile(1.0, 1.0, eps, lam0, ell, 1.0, np.linspace(0, 1, 11))


def test_resonance_constants(vq_chart, circle, profile3):
    c0, c1 = resonance_constants(vq_chart, profile3)
    assert c0 == pytest.approx(0.0, abs=1e-12) and c1 == pytest.approx(0.0, abs=1e-12)
    assert resonance_constants(circle[2], profile3) == (0.0, 0.0)


def test_resonance_term_toggle(vq_chart, profile3):
    ans, _ = layered(vq_chart, profile3, 1, 0.025, resonance_A=True)
    base, _ = layered(vq_chart, profile3, 1, 0.025)
    Y = np.array([[0.0, 0.5], [0.01, 0.3]])
    assert np.allclose(ans.predict(Y), base.predict(Y))


# ------------------------------------------------------------ spacing

def test_spacing_report(vq_chart, profile3):
    rs = []
    for eps in (1e-2, 5e-3):
        _, sol = layered(vq_chart, profile3, 2, eps)
        rep = spacing_report(sol, eps, vq_chart.beta)
        assert 0.85 <= rep["min_ratio"] <= 1.15
        rs.append(rep["min_ratio"])
    assert abs(rs[1] - 1) < abs(rs[0] - 1)
    _, sol1 = layered(vq_chart, profile3, 1, 1e-2)
    assert spacing_report(sol1, 1e-2, vq_chart.beta) == {}
