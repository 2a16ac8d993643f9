import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sidewise.errors import NotHyperbolic
from sidewise.geometry import ConstantMetric, LinearX1Metric, annulus
from sidewise.symbols import (BoundaryCovector, GlancingKind, PhasePoint, Region, boundary_r0, classify, dn_r,
                              fiber_count, hamiltonian_field, hyperbolic_lift, principal_symbol, reflect_hyperbolic,
                              split_covector)

from .conftest import variable_metrics

BOTTOM_S = 1.5          # a point on the flat bottom edge of the rounded rectangle, x = (1.8, 0)


def test_principal_symbol_examples(flat):
    assert principal_symbol(PhasePoint(0, [0, 0], 1.0, [1.0, 0.0]), flat) == 0.0
    assert principal_symbol(PhasePoint(0, [0, 0], 1.0, [0.0, 0.0]), flat) == 1.0
    assert principal_symbol(PhasePoint(0, [0, 0], 2.0, [1.0, 0.0]), ConstantMetric([[4, 0], [0, 1]])) == 0.0


def test_hamiltonian_field_examples(flat):
    dt, dx, dtau, dxi = hamiltonian_field(PhasePoint(0, [0.3, 0.1], 1.0, [-1.0, 0.0]), flat)
    assert dt == 2.0 and np.allclose(dx, [2.0, 0.0]) and dtau == 0.0 and np.allclose(dxi, 0.0)
    m = LinearX1Metric(1.0, 1, (-0.5, 0.5))
    _, _, dtau, dxi = hamiltonian_field(PhasePoint(0, [0.2, 0.0], 0.7, [1.0, 0.0]), m)
    assert dtau == 0.0 and dxi[0] == pytest.approx(1.0)


def test_boundary_r0_examples(ring, flat):
    for tau, xi, r0 in [(1.0, 0.0, 1.0), (1.0, 1.0, 0.0), (1.0, -1.0, 0.0), (0.5, 1.0, -0.75)]:
        assert boundary_r0(BoundaryCovector("inner", 0.4, 0, tau, xi), ring, flat) == pytest.approx(r0)


def test_glancing_split_on_the_annulus(ring, flat):
    inner = classify(BoundaryCovector("inner", 0.0, 0, 1.0, 1.0), ring, flat)
    outer = classify(BoundaryCovector("outer", 0.0, 0, 1.0, 1.0), ring, flat)
    assert inner.label == "Glancing(Diffractive)"
    assert outer.label == "Glancing(StrictlyGliding)"


def test_flat_boundary_glancing_is_degenerate(box, flat):
    c = classify(BoundaryCovector("boundary", BOTTOM_S, 0, 1.0, 1.0), box, flat)
    assert c.region is Region.GLANCING and c.kind is GlancingKind.DEGENERATE


@pytest.mark.parametrize("R1,R2", [(1.0, 2.0), (0.5, 3.0), (2.0, 2.5)])
def test_dn_r_sign_audit(R1, R2, flat):
    d = annulus(R1, R2)
    for s in np.linspace(0, 2 * math.pi, 5):
        b_in = BoundaryCovector("inner", s * R1, 0, 1.0, 1.0)
        b_out = BoundaryCovector("outer", s * R2, 0, 1.0, 1.0)
        assert dn_r(b_in, d, flat) == pytest.approx(2 / R1, abs=1e-6)
        assert dn_r(b_out, d, flat) == pytest.approx(-2 / R2, abs=1e-6)


@pytest.mark.parametrize("metric", variable_metrics(), ids=lambda m: m.name)
def test_dn_r_routes_agree(metric):
    d = annulus(1.0, 2.0)
    for curve, s in [("inner", 0.3), ("inner", 2.0), ("outer", 1.0), ("outer", 9.0)]:
        ch = d.chart(curve, s, metric)
        b = BoundaryCovector(curve, s, 0, math.sqrt(ch.h), 1.0)
        assert dn_r(b, d, metric, "fd") == pytest.approx(dn_r(b, d, metric, "analytic"), rel=1e-6, abs=1e-8)


def test_fiber_count_examples(ring, flat):
    assert fiber_count(BoundaryCovector("inner", 0, 0, 1.0, 0.0), ring, flat) == 2
    assert fiber_count(BoundaryCovector("inner", 0, 0, 1.0, 1.0), ring, flat) == 1
    assert fiber_count(BoundaryCovector("inner", 0, 0, 0.5, 1.0), ring, flat) == 0


def test_hyperbolic_lift_examples(box, flat):
    up = hyperbolic_lift(BoundaryCovector("boundary", BOTTOM_S, 0, 1.0, 0.0), +1, box, flat)
    assert np.allclose(up.xi, [0.0, 1.0])
    p = hyperbolic_lift(BoundaryCovector("boundary", BOTTOM_S, 0, 1.0, 0.6), -1, box, flat)
    ch = box.chart("boundary", BOTTOM_S, flat)
    assert split_covector(p.xi, ch)[1] == pytest.approx(-0.8)
    assert principal_symbol(p, flat) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(NotHyperbolic):
        hyperbolic_lift(BoundaryCovector("boundary", BOTTOM_S, 0, 1.0, 1.0), 1, box, flat)


def test_reflection_keeps_tangential_part(ring, flat):
    b = BoundaryCovector("outer", 1.0, 0.0, 1.0, 0.4)
    xi_n = math.sqrt(boundary_r0(b, ring, flat))
    out = reflect_hyperbolic(b, xi_n, ring, flat)
    ch = ring.chart("outer", 1.0, flat)
    xt, xn = split_covector(out.xi, ch)
    assert xt == pytest.approx(0.4, abs=1e-14) and xn == pytest.approx(-xi_n, abs=1e-14)
    with pytest.raises(NotHyperbolic):
        reflect_hyperbolic(b, -xi_n, ring, flat)


covectors = st.tuples(st.floats(-1, 1), st.floats(-1, 1)).filter(lambda v: math.hypot(*v) > 1e-3)


@settings(max_examples=150, deadline=None)
@given(v=covectors, lam=st.floats(1e-3, 1e3), s=st.floats(0, 6.28), curve=st.sampled_from(["inner", "outer"]))
def test_classification_is_homogeneous(v, lam, s, curve):
    ring = annulus(1.0, 2.0)
    metric = ConstantMetric([[2.0, 0.3], [0.3, 1.0]])
    b = BoundaryCovector(curve, s, 0, *v)
    bl = BoundaryCovector(curve, s, 0, lam * v[0], lam * v[1])
    assert classify(b, ring, metric).region == classify(bl, ring, metric).region
    assert fiber_count(b, ring, metric) == fiber_count(bl, ring, metric)


def test_fiber_count_matches_classification_on_random_covectors():
    ring = annulus(1.0, 2.0)
    rng = np.random.default_rng(4)
    expected = {Region.ELLIPTIC: 0, Region.GLANCING: 1, Region.HYPERBOLIC: 2}
    for metric in variable_metrics():
        for _ in range(400):
            curve = "inner" if rng.random() < 0.5 else "outer"
            s = rng.uniform(0, ring.curve(curve).length)
            ang = rng.uniform(0, 2 * math.pi)
            b = BoundaryCovector(curve, s, 0, math.cos(ang), math.sin(ang))
            assert fiber_count(b, ring, metric) == expected[classify(b, ring, metric).region]
