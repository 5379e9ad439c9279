"""Weighted length, its variations and the non-degeneracy measure."""
import dataclasses

import numpy as np
import pytest

from layerforge.geodesic import (explicit_coefficients, first_variation, jacobi_matrix,
                                 nondegeneracy, second_variation, second_variation_form,
                                 stationarity_residual, weighted_length)
from layerforge.geometry import GeometryError

from conftest import straight_chart


def bump(c0, w, amp):
    def h(th):
        x = (th - c0) / w
        return np.where(np.abs(x) < 1, amp * np.exp(-1 / np.maximum(1 - x**2, 1e-300)), 0.0)
    return h


@pytest.fixture(scope="module")
def tilted_chart():
    return straight_chart(V="2-(y1-0.1)^2", M=512)


def _fd_first(ch, h, s=1e-4):
    return (weighted_length(ch, lambda th: s * h(th)) - weighted_length(ch, lambda th: -s * h(th))) / (2 * s)


def _fd_second(ch, h, s=2e-3):
    J0 = weighted_length(ch)
    D = lambda s: (weighted_length(ch, lambda th: s * h(th)) - 2 * J0
                   + weighted_length(ch, lambda th: -s * h(th))) / s**2
    return (4 * D(s / 2) - D(s)) / 3


def test_flat_length_is_one(flat_chart):
    assert weighted_length(flat_chart) == pytest.approx(1.0, abs=1e-13)


def test_vq_length_closed_form(vq_chart):
    # V^sigma with sigma = 3/2 and V = 2 along x = 0
    assert weighted_length(vq_chart) == pytest.approx(2**1.5, abs=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_first_variation_matches_fd(tilted_chart, seed):
    rng = np.random.default_rng(seed)
    h = bump(rng.uniform(0.3, 0.7), rng.uniform(0.15, 0.25), rng.uniform(-1, 1))
    assert first_variation(tilted_chart, h) == pytest.approx(_fd_first(tilted_chart, h), abs=1e-7)


def test_first_variation_curved(curved):
    *_, ch = curved
    for h in (bump(0.4, 0.2, 0.7), bump(0.6, 0.15, -0.4)):
        assert first_variation(ch, h) == pytest.approx(_fd_first(ch, h), abs=1e-6)


@pytest.mark.parametrize("V", ["2-y1^2", "2-(y1-0.1)^2"])
def test_second_variation_matches_fd(V):
    # narrow bumps need a fine grid for the table derivatives
    ch = straight_chart(V=V, M=2048)
    for h in (bump(0.5, 0.25, 1.0), bump(0.35, 0.15, -0.6)):
        assert second_variation_form(ch, h) == pytest.approx(_fd_second(ch, h), rel=1e-6)


def test_second_variation_curved(curved):
    *_, ch = curved
    h = bump(0.5, 0.25, 0.8)
    assert second_variation_form(ch, h) == pytest.approx(_fd_second(ch, h), rel=1e-4, abs=1e-5)


def test_explicit_coefficients_agree(curved, circle):
    for ch in (curved[3], circle[2]):
        rep = second_variation(ch, compute_sigma=False)
        for a, b in zip((rep.H1, rep.H2, rep.H3), explicit_coefficients(ch)):
            assert np.max(np.abs(a - b)) < 1e-12 * max(1.0, np.max(np.abs(a)))


def test_stationarity_flags(vq_chart, tilted_chart):
    rep = second_variation(vq_chart)
    assert rep.stationary and rep.admissible and rep.tau2_positive and rep.nondegenerate
    assert np.max(np.abs(rep.residual)) < 1e-12
    bad = second_variation(tilted_chart)
    assert not bad.stationary
    # the residual on the shifted well: k minus sigma V_t f0 / (V D)
    assert np.allclose(bad.residual, -1.5 * 0.2 / (2 - 0.01), atol=1e-12)


def test_residual_drives_first_variation(tilted_chart):
    """J'(0)[h] vanishes for all h exactly when the residual vanishes."""
    r = stationarity_residual(tilted_chart)
    h = bump(0.5, 0.25, 1.0)
    assert abs(first_variation(tilted_chart, h)) > 1e-2
    assert np.all(r < 0)


def test_v_quadratic_closed_forms(vq_chart):
    rep = second_variation(vq_chart)
    s2 = np.sqrt(2)
    assert np.allclose(rep.H1, s2, atol=1e-10)
    assert np.allclose(rep.H2, 0.0, atol=1e-12)
    assert np.allclose(rep.H3, -1.5 * s2, atol=1e-10)
    assert np.allclose(rep.tau2, 1.5 * s2, atol=1e-10)
    assert np.allclose(rep.tau1, 0.0, atol=1e-10)
    assert rep.K1 == pytest.approx(0.0, abs=1e-12) and rep.K2 == pytest.approx(0.0, abs=1e-12)


def test_hbar_relations(curved, vq_chart):
    rep = second_variation(curved[3], compute_sigma=False)
    assert np.max(np.abs(rep.hbar1 - rep.zeta * rep.dH1)) < 1e-6
    rv = second_variation(vq_chart, compute_sigma=False)
    assert np.max(np.abs(rv.hbar2 - rv.zeta * rv.q)) < 1e-8


def test_nondegeneracy_flat_is_degenerate(flat_chart):
    rep = second_variation(flat_chart)
    assert rep.sigma_min < 1e-9
    assert rep.nondegenerate is False


def test_nondegeneracy_vq_resolution_stable(vq_chart):
    rep = second_variation(vq_chart)
    assert rep.sigma_min == pytest.approx(1.5, rel=1e-3)
    assert nondegeneracy(rep, M=200) == pytest.approx(nondegeneracy(rep, M=400), rel=1e-3)


@pytest.mark.parametrize("mode", ["constant", "linear"])
def test_nondegeneracy_detects_manufactured_kernel(vq_chart, mode):
    """Operators with a known discrete kernel give sigma_min at rounding level."""
    rep = second_variation(vq_chart, compute_sigma=False)
    th = rep.theta
    h = th[1] - th[0]
    one = np.ones_like(th)
    if mode == "constant":
        # f = cos(pi theta): f'' + pi_h^2 f = 0 with the discrete symbol
        qh = (4 / h**2) * np.sin(np.pi * h / 2) ** 2
        fake = dataclasses.replace(rep, H1=one, dH1=0 * one, dH2=qh * one, H3=0 * one,
                                   b1=1.0, b2=0.0, b6=1.0, b7=0.0)
    else:
        # f = 1 + theta solves f'' = 0 with f'(0) = f(0), f'(1) = f(1)/2
        fake = dataclasses.replace(rep, H1=one, dH1=0 * one, dH2=0 * one, H3=0 * one,
                                   b1=1.0, b2=1.0, b6=2.0, b7=1.0)
    assert nondegeneracy(fake) < 1e-8
    shifted = dataclasses.replace(fake, dH2=fake.dH2 + 1.0)
    assert nondegeneracy(shifted) > 0.1


def test_jacobi_matrix_periodic_shape():
    th = np.linspace(0, 1, 65)
    one = np.ones_like(th)
    A = jacobi_matrix(th, one, 0 * one, 0 * one, mode="periodic")
    assert A.shape == (64, 64)
    assert np.allclose(A @ np.ones(64), 0.0)
    with pytest.raises(ValueError):
        jacobi_matrix(th, one, 0 * one, 0 * one, bc=(0.0, 1.0, 1.0, 0.0))


def test_closed_curve_report(circle):
    rep = second_variation(circle[2])
    assert rep.closed and rep.K1 == 0.0 and rep.admissible
    assert np.isfinite(rep.sigma_min)


def test_deformation_outside_radius(vq_chart):
    with pytest.raises(GeometryError):
        weighted_length(vq_chart, lambda th: 0.5 + 0 * th, radius=0.1)
