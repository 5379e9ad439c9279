"""Shared charts and profiles for the test suite."""
import numpy as np
import pytest
from scipy import integrate, optimize

from layerforge.geometry import build_chart, build_curve, endpoint_contact, make_fields
from layerforge.profiles import ground_state, interaction_constants, solve_omega

PI = "3.141592653589793"


def straight_chart(a1="1", a2="1", V="2-y1^2", M=400, p=3.0):
    c = build_curve({"x": "0", "y": "s"}, M)
    ct = endpoint_contact(c, "0", "1")
    return build_chart(c, make_fields(a1, a2, V), ct, p)


def curved_setup(M=256):
    """Wavy segment of unit length between two curved walls, anisotropic fields."""
    A = 0.04
    L = lambda lam: integrate.quad(lambda s: np.hypot(A * 2 * np.pi * np.sin(2 * np.pi * s), lam), 0, 1,
                                   epsabs=1e-14)[0]
    lam = optimize.brentq(lambda l: L(l) - 1, 0.5, 1.0, xtol=1e-15)
    curve = build_curve({"x": f"{A!r}*(1-cos(2*{PI}*s))", "y": f"{lam!r}*s"}, M)
    contact = endpoint_contact(curve, "0.6*y1^2/2", f"{lam!r} - 0.8*y1^2/2")
    fields = make_fields("1+0.2*y1+0.1*y1*y2", "1+0.1*y1^2-0.05*y1", "2-y1^2+0.1*y2")
    return curve, fields, contact


def circle_setup(M=256):
    r = 1 / (2 * np.pi)
    curve = build_curve({"x": f"{r!r}*cos(2*{PI}*s)", "y": f"-{r!r}*sin(2*{PI}*s)", "closed": True}, M)
    fields = make_fields("1+0.3*y1+0.2*y2^2", "1+0.1*y2-0.2*y1*y2", "1.5+y1+0.3*y2^2")
    return curve, fields


@pytest.fixture(scope="session")
def vq_chart():
    return straight_chart()


@pytest.fixture(scope="session")
def flat_chart():
    return straight_chart(V="1")


@pytest.fixture(scope="session")
def curved():
    curve, fields, contact = curved_setup()
    return curve, fields, contact, build_chart(curve, fields, contact, 3.0)


@pytest.fixture(scope="session")
def circle():
    curve, fields = circle_setup()
    return curve, fields, build_chart(curve, fields, None, 3.0)


@pytest.fixture(scope="session")
def profile3():
    pr = ground_state(3.0)
    interaction_constants(pr)
    for k in range(4):
        solve_omega(pr, k)
    return pr
