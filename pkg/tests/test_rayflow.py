import math

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from sidewise.geometry import BoundaryRegion, IdentityMetric, LinearX1Metric, annulus, normal_curvature, peanut
from sidewise.rayflow import (DenseStep, EventKind, RayState, RayTolerances, detect_boundary_event,
                              integrate_interior, characteristic_phase, reflect_covector, trace)
from sidewise.symbols import BoundaryCovector, PhasePoint, principal_symbol, split_covector

from .conftest import angle_between


def straight_dense(x0, v, t1):
    x0, v = np.asarray(x0, float), np.asarray(v, float)
    y0 = np.concatenate([x0, -v])
    y1 = np.concatenate([x0 + t1 * v, -v])
    f = np.concatenate([v, [0.0, 0.0]])
    return DenseStep(0.0, t1, y0, y1, f, f)


def test_straight_line_interior_step(flat):
    st0 = RayState(PhasePoint(0.0, [0.0, 0.0], 1 / math.sqrt(2), [-1 / math.sqrt(2), 0.0]))
    new, dense, shift, _ = integrate_interior(st0, flat, 0.25)
    t = new.phase.t
    assert np.allclose(new.phase.x, [t, 0.0], atol=1e-14)
    assert np.allclose(new.phase.xi, st0.phase.xi, atol=1e-12) and new.phase.tau == pytest.approx(st0.phase.tau)
    assert shift <= 1e-12


def test_variable_metric_conserves_symbol():
    m = LinearX1Metric(0.3, 2, (-2.5, 2.5))
    st0 = RayState(characteristic_phase([0.0, 0.0], [1.0, 0.7], m))
    t_end, worst = 0.0, 0.0
    while t_end < 2.0:
        st0, dense, shift, _ = integrate_interior(st0, m, 0.25)
        worst = max(worst, abs(principal_symbol(st0.phase, m)), shift)
        t_end = st0.phase.t
    assert worst <= 1e-9 * max(t_end, 1.0)


def test_event_normal_incidence_on_flat_wall(box):
    t, kind = detect_boundary_event(straight_dense([2.0, 1.0], [0.0, -1.0], 1.5), box, 0.0)
    assert kind == "crossing" and t == pytest.approx(1.0, abs=1e-12)


def test_event_parallel_to_wall(box):
    assert detect_boundary_event(straight_dense([1.0, 1.0], [1.0, 0.0], 1.5), box, 0.0) is None


def test_event_tangent_to_inner_circle(ring, flat):
    dense = straight_dense([1.0, -1.0], [0.0, 1.0], 2.0)
    t, kind = detect_boundary_event(dense, ring, 0.0)
    assert kind == "touch" and t == pytest.approx(1.0, abs=1e-7)
    x = dense(t)[:2]
    name, s, _ = ring.boundary_project(x, check_collar=False)
    ch = ring.chart(name, s, flat)
    xt, _ = split_covector(np.array([0.0, -1.0]), ch)
    assert abs(1.0 - ch.h * xt**2) <= 1e-8


def test_reflection_examples(box, ring, flat):
    ch = box.chart("boundary", 1.5, flat)
    xi_in = np.array([-0.6, 0.8])                # ray moving along (0.6, -0.8), towards the wall
    out = reflect_covector(xi_in, ch)
    assert np.allclose(out, [-0.6, -0.8], atol=1e-15)
    assert np.allclose(reflect_covector(np.array([0.0, 1.0]), ch), [0.0, -1.0])
    # circle: equal angles to the local tangent
    ch = ring.chart("outer", 0.7, flat)
    v_in = np.array([math.cos(0.2), math.sin(0.9)])
    v_out = -reflect_covector(-v_in, ch)
    a_in = angle_between(ch.t_vec, v_in)
    a_out = angle_between(ch.t_vec, v_out)
    assert abs(a_in + a_out) <= 1e-8


def test_double_reflection_is_identity(ring):
    m = LinearX1Metric(0.3, 2, (-2.5, 2.5))
    rng = np.random.default_rng(5)
    for _ in range(50):
        ch = ring.chart("outer", rng.uniform(0, 4 * math.pi), m)
        xi = rng.normal(size=2)
        assert np.allclose(reflect_covector(reflect_covector(xi, ch), ch), xi, atol=1e-12)


def test_gliding_quarter_circle(ring, flat):
    b = BoundaryCovector("outer", 0.0, 0.0, 1.0, 1.0)
    path = trace(b, ring, flat, math.pi, lift="glancing")
    data, regimes = path.samples()
    assert "gliding" in regimes
    # velocity is -xi (tau > 0), so positive xi_t glides clockwise
    assert np.allclose(data[-1, 1:3], [0.0, -2.0], atol=1e-6)
    assert np.max(np.abs(data[:, 3] - data[0, 3])) <= 1e-10          # tau constant
    r = np.linalg.norm(data[:, 1:3], axis=1)
    assert np.max(np.abs(r - 2.0)) <= 1e-9


def test_gliding_step_exits_where_boundary_turns_concave(flat):
    d = peanut()
    s0 = 0.0
    ch = d.chart("boundary", s0, flat)
    b = BoundaryCovector("boundary", s0, 0.0, 1.0, 1.0 / math.sqrt(ch.h))
    path = trace(b, d, flat, 3.0, lift="glancing")
    exits = path.events_of(EventKind.GLIDING_EXIT)
    assert exits
    assert exits[0].x is not None
    assert abs(normal_curvature(d, "boundary", exits[0].s, flat)) <= 1e-6


def test_annulus_glancing_chord(ring, flat):
    watch = [BoundaryRegion("outer", "O'")]
    path = trace(BoundaryCovector("inner", 0.0, 0.0, 1.0, 1.0), ring, flat, 3.0, watch, lift="glancing")
    kinds = [e.kind for e in path.events]
    assert kinds[0] is EventKind.DIFFRACTIVE_TOUCH
    hit = [e for e in path.events if e.kind is EventKind.REGION_HIT and e.label == "O'"][0]
    assert hit.t == pytest.approx(math.sqrt(3), abs=1e-9)
    assert hit.classification.label == "Hyperbolic"


def test_annulus_hyperbolic_exit_is_faster_than_chord(ring, flat):
    watch = [BoundaryRegion("outer", "O'")]
    for xt in [0.0, 0.3, 0.9]:
        b = BoundaryCovector("inner", 1.0, 0.0, 1.0, xt)
        path = trace(b, ring, flat, 3.0, watch, lift=+1)
        hit = [e for e in path.events if e.kind is EventKind.REGION_HIT][0]
        assert hit.t <= math.sqrt(3) + 1e-9
        R1, R2, u = 1.0, 2.0, math.sqrt(1 - xt**2)
        assert hit.t == pytest.approx(-R1 * (-u) + math.sqrt((R1 * u) ** 2 + R2**2 - R1**2) - 2 * R1 * u, abs=1e-8)


def test_disc_billiard_reflection_count(unit_disc, flat):
    # chord subtending 2 * alpha; chord length 2 sin(alpha)
    alpha = 1.1
    b = BoundaryCovector("circle", 0.0, 0.0, 1.0, math.cos(alpha))
    T = 10.0
    path = trace(b, unit_disc, flat, T, lift=-1)
    chord = 2 * math.sin(alpha)
    n = len(path.events_of(EventKind.HYPERBOLIC_REFLECTION))
    assert n == math.floor(T / chord)


def _assert_path_invariants(path, domain, metric):
    tol = RayTolerances()
    data, _ = path.samples()
    assert path.max_abs_symbol <= 1e-8
    assert all(s <= 1e-9 for s in path.projection_shifts)
    ts = [e.t for e in path.events]
    assert ts == sorted(ts)
    for a, b in zip(path.arcs, path.arcs[1:]):
        ta, xa, _, xia = a.arrays()
        tb, xb, _, xib = b.arrays()
        if len(ta) and len(tb):
            assert np.linalg.norm(xa[-1] - xb[0]) <= 1e-9
            jump = xib[0] - xia[-1]
            if np.linalg.norm(jump) > 1e-9:
                name, s, _ = domain.boundary_project(xb[0], check_collar=False)
                ch = domain.chart(name, s, metric)
                assert abs(jump @ ch.t_vec) <= 1e-9       # tangential part preserved
    bounce = [e.t for e in path.events if e.kind in (EventKind.HYPERBOLIC_REFLECTION, EventKind.DIFFRACTIVE_TOUCH)]
    assert all(b - a >= tol.dwell for a, b in zip(bounce, bounce[1:]))


@settings(max_examples=30, deadline=None)
@given(r=st.floats(1.05, 1.95), th=st.floats(0, 6.283), ang=st.floats(0, 6.283))
@example(r=1.5, th=1.5, ang=1.5)          # radial bounce landing exactly on the horizon
def test_flat_rays_are_straight_and_unit_speed(r, th, ang):
    ring, flat = annulus(1.0, 2.0), IdentityMetric()
    x0 = np.array([r * math.cos(th), r * math.sin(th)])
    path = trace(characteristic_phase(x0, [math.cos(ang), math.sin(ang)], flat), ring, flat, 1.5)
    _assert_path_invariants(path, ring, flat)
    first = path.arcs[0]
    t, x, _, _ = first.arrays()
    d = np.array([math.cos(ang), math.sin(ang)])
    dev = x - x0 - (t - t[0])[:, None] * d
    assert np.max(np.linalg.norm(dev, axis=1)) <= 1e-8 * max(t[-1] - t[0], 1.0)
    seg = np.sum(np.linalg.norm(np.diff(x, axis=0), axis=1))
    assert seg <= (t[-1] - t[0]) + 1e-8


def test_variable_metric_path_invariants(ring):
    m = LinearX1Metric(0.3, 2, (-2.5, 2.5))
    for ang in [0.3, 1.7, 4.0]:
        path = trace(characteristic_phase([1.4, 0.2], [math.cos(ang), math.sin(ang)], m), ring, m, 6.0)
        _assert_path_invariants(path, ring, m)


def test_diffractive_touch_is_continuous(ring, flat):
    # a straight ray tangent to the inner circle passes through with no covector jump
    p = characteristic_phase([1.0, -1.0], [0.0, 1.0], flat)
    path = trace(p, ring, flat, 2.0)
    touch = path.events_of(EventKind.DIFFRACTIVE_TOUCH)
    assert touch and np.allclose(touch[0].xi, p.xi, atol=1e-10)
