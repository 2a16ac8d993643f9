"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line (also listed in the terminal summary)."""

import math
import time

import numpy as np
import pytest

from sidewise import config, sources as S, wavesim as W
from sidewise import experiments as E
from sidewise.geometry import IdentityMetric, LinearX1Metric, annulus, ConstantMetric, ConformalBumpMetric
from sidewise.rayflow import EventKind, characteristic_phase, reflect_covector, trace
from sidewise.symbols import BoundaryCovector, classify, dn_r, fiber_count, split_covector

from .conftest import ACCEPTANCE


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def random_interior_rays(domain, metric, n, rng, t_max):
    paths = []
    while len(paths) < n:
        r, th, ang = rng.uniform(1.05, 1.95), rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi)
        x0 = np.array([r * math.cos(th), r * math.sin(th)])
        paths.append(trace(characteristic_phase(x0, [math.cos(ang), math.sin(ang)], metric), domain, metric, t_max))
    return paths


@pytest.fixture(scope="module")
def annulus_ctx():
    return E.build_context(config.preset("annulus"))


@pytest.fixture(scope="module")
def annulus_verdict(annulus_ctx):
    return E.run_sgcc(annulus_ctx)


# ---------------------------------------------------------------- 1

def test_criterion_1_flow_exactness():
    start = time.perf_counter()
    ring, flat = annulus(1.0, 2.0), IdentityMetric()
    paths = random_interior_rays(ring, flat, 100, np.random.default_rng(101), 4.0)
    dev, speed, sym = 0.0, 0.0, 0.0
    for path in paths:
        sym = max(sym, path.max_abs_symbol)
        for arc in path.arcs:
            t, x, _, _ = arc.arrays()
            if arc.regime != "interior" or len(t) < 3 or t[-1] - t[0] < 1e-9:
                continue
            length = t[-1] - t[0]
            v = (x[-1] - x[0]) / length
            speed = max(speed, abs(np.linalg.norm(v) - 1.0))
            off = x - x[0] - (t - t[0])[:, None] * v
            dev = max(dev, float(np.max(np.linalg.norm(off, axis=1))) / length)
    elapsed = time.perf_counter() - start
    ok = dev <= 1e-8 and speed <= 1e-8 and sym <= 1e-8 and elapsed <= 5.0
    assert report(1, ok, f"deviation/length {dev:.2e}, speed error {speed:.2e}, max |p| {sym:.2e}, "
                         f"{elapsed:.2f} s")


# ---------------------------------------------------------------- 2

def test_criterion_2_reflection_law():
    ring = annulus(1.0, 2.0)
    worst_t, worst_n, hits = 0.0, 0.0, 0
    rng = np.random.default_rng(202)
    for metric in (IdentityMetric(), LinearX1Metric(0.3, 2, (-2.5, 2.5))):
        for path in random_interior_rays(ring, metric, 20, rng, 8.0):
            for a, b in zip(path.arcs, path.arcs[1:]):
                ta, _, _, xia = a.arrays()
                tb, xb, _, xib = b.arrays()
                if not (len(ta) and len(tb)) or np.linalg.norm(xib[0] - xia[-1]) <= 1e-12:
                    continue
                if hits >= 100:
                    break
                name, s, _ = ring.boundary_project(xb[0], check_collar=False)
                ch = ring.chart(name, s, metric)
                ta_, na_ = split_covector(xia[-1], ch)
                tb_, nb_ = split_covector(xib[0], ch)
                scale = np.linalg.norm(xia[-1])
                worst_t = max(worst_t, abs(tb_ - ta_) / scale)
                worst_n = max(worst_n, abs(nb_ + na_) / scale)
                hits += 1
    invol = 0.0
    metric = ConstantMetric([[2.0, 0.3], [0.3, 1.0]])
    for _ in range(100):
        curve = "inner" if rng.random() < 0.5 else "outer"
        ch = ring.chart(curve, rng.uniform(0, ring.curve(curve).length), metric)
        xi = rng.normal(size=2)
        invol = max(invol, np.linalg.norm(reflect_covector(reflect_covector(xi, ch), ch) - xi) / np.linalg.norm(xi))
    ok = hits >= 100 and worst_t <= 1e-10 and worst_n <= 1e-10 and invol <= 1e-10
    assert report(2, ok, f"{hits} hits, tangential {worst_t:.1e}, normal {worst_n:.1e}, "
                         f"double reflection {invol:.1e}")


# ---------------------------------------------------------------- 3

def test_criterion_3_gliding_oracle():
    ring, flat = annulus(1.0, 2.0), IdentityMetric()
    path = trace(BoundaryCovector("outer", 0.0, 0.0, 1.0, 1.0), ring, flat, math.pi, lift="glancing")
    data, regimes = path.samples()
    glide = np.array([r == "gliding" for r in regimes])
    t, x = data[:, 0], data[:, 1:3]
    # unit speed along the circle of radius 2, clockwise: x(t) = 2 (cos(t/2), -sin(t/2))
    exact = 2.0 * np.stack([np.cos(t / 2), -np.sin(t / 2)], axis=1)
    err = float(np.max(np.linalg.norm(x - exact, axis=1)))
    end = float(np.linalg.norm(x[-1] - [0.0, -2.0]))
    ok = glide.all() and abs(t[-1] - math.pi) <= 1e-6 and end <= 1e-6 and err <= 1e-6
    assert report(3, ok, f"quarter arc reached at t = {t[-1]:.9f}, endpoint error {end:.1e}, path error {err:.1e}")


# ---------------------------------------------------------------- 4

def test_criterion_4_classification_oracle():
    ring = annulus(1.0, 2.0)
    rng = np.random.default_rng(404)
    expected = {"Elliptic": 0, "Hyperbolic": 2}
    metrics = [IdentityMetric(), ConstantMetric([[2.0, 0.3], [0.3, 1.0]]), LinearX1Metric(0.3, 2, (-2.5, 2.5)),
               ConformalBumpMetric(0.3, (0.5, 0.5), 0.7)]
    mismatches, n = 0, 10_000
    for i in range(n):
        metric = metrics[i % len(metrics)]
        curve = "inner" if rng.random() < 0.5 else "outer"
        s = rng.uniform(0, ring.curve(curve).length)
        ang = rng.uniform(0, 2 * math.pi)
        b = BoundaryCovector(curve, s, 0.0, math.cos(ang), math.sin(ang))
        label = classify(b, ring, metric).region.name.capitalize()
        want = expected.get(label, 1)
        mismatches += fiber_count(b, ring, metric) != want
    flat = IdentityMetric()
    dn_err = 0.0
    for s in rng.uniform(0, 2 * math.pi, 50):
        bi = BoundaryCovector("inner", s, 0.0, 1.0, 1.0)
        bo = BoundaryCovector("outer", 2 * s, 0.0, 1.0, 1.0)
        assert classify(bi, ring, flat).label == "Glancing(Diffractive)"
        assert classify(bo, ring, flat).label == "Glancing(StrictlyGliding)"
        # tau = |xi_t| = 1: dn_r = +2/R1 on the inner circle and -2/R2 on the outer one
        dn_err = max(dn_err, abs(dn_r(bi, ring, flat) - 2.0), abs(dn_r(bo, ring, flat) + 1.0))
    ok = mismatches == 0 and dn_err <= 1e-6
    assert report(4, ok, f"{mismatches} mismatches in {n} covectors, dn_r error {dn_err:.1e}")


# ---------------------------------------------------------------- 5

def test_criterion_5_sgcc_flagship(annulus_verdict):
    start = time.perf_counter()
    v = E.run_sgcc(E.build_context(config.preset("annulus")))
    elapsed = time.perf_counter() - start
    quarter = E.run_sgcc(E.build_context(config.preset("annulus_quarter")))
    disc = E.run_sgcc(E.build_context(config.preset("disc")))
    cert = quarter.violations[0] if quarter.violations else None
    has_cert = cert is not None and cert.path is not None and len(cert.path.get("events", [])) > 0
    ratio = v.T0_observed / math.sqrt(3) if v.T0_observed else float("nan")
    ok = (v.status == "VERIFIED_ON_SAMPLES" and 0.98 <= ratio <= 1.02 and quarter.status == "VIOLATED"
          and has_cert and disc.status == "VIOLATED" and elapsed <= 60.0)
    assert report(5, ok, f"annulus {v.status} T0/sqrt3 = {ratio:.6f} in {elapsed:.1f} s; quarter {quarter.status} "
                         f"({cert.outcome if cert else 'no'} certificate); disc {disc.status}")


# ---------------------------------------------------------------- 6

def _manufactured_errors():
    A = np.array([[2.0, 0.3], [0.3, 1.0]])
    metric = ConstantMetric(A)

    def f(X):
        return np.sin(X[:, 0]) * np.cos(X[:, 1])

    def Af(X):
        x, y = X[:, 0], X[:, 1]
        return (A[0, 0] + A[1, 1]) * (-np.sin(x) * np.cos(y)) + 2 * A[0, 1] * (-np.cos(x) * np.sin(y))

    errs = []
    for n in [(10, 64), (20, 128), (40, 256)]:
        grid, op = W.assemble(annulus(1.0, 2.0), metric, n)
        dt = op.stable_dt(grid)
        rec = W.run(grid, op, [], 1.0, dt=dt, initial=(f, lambda X: np.zeros(len(X))),
                    forcing=lambda t, X: -math.cos(t) * (f(X) + Af(X)),
                    boundary_override=lambda t, X: math.cos(t) * f(X), keep_final=True)
        e = rec.final[1] - math.cos(rec.n_steps * dt) * f(grid.X.reshape(-1, 2))
        errs.append(math.sqrt(np.sum(op.mass * e * e)))
    return errs


def _dalembert_errors():
    strip = W.RectangleSpec(0.0, 1.0, 0.0, 0.1, periodic_y=True)

    def g(t):
        return S.windowed_sine(t, 2.0, 1.0, 0.0)

    errs = []
    for nx in [50, 100, 200]:
        grid, op = W.assemble(strip, IdentityMetric(), (nx, 4))
        dt = op.stable_dt(grid)
        tt = np.arange(int(math.ceil(0.9 / dt)) + 1) * dt
        rec = W.run(grid, op, [W.dirichlet_on(grid, "left", np.repeat(g(tt)[:, None], 4, axis=1))], 0.9, dt=dt,
                    keep_final=True)
        u = rec.final[1].reshape(grid.shape)[:, 0]
        errs.append(math.sqrt(np.mean((u - g(rec.n_steps * dt - grid.q1)) ** 2)))
    return errs


def test_criterion_6_solver_convergence():
    mms, dal = _manufactured_errors(), _dalembert_errors()
    o_mms = [math.log2(mms[i] / mms[i + 1]) for i in range(2)]
    o_dal = [math.log2(dal[i] / dal[i + 1]) for i in range(2)]
    ok = min(o_mms) >= 1.9 and min(o_dal) >= 1.9
    assert report(6, ok, f"manufactured orders {o_mms[0]:.3f}, {o_mms[1]:.3f}; "
                         f"d'Alembert orders {o_dal[0]:.3f}, {o_dal[1]:.3f}")


# ---------------------------------------------------------------- 7

def test_criterion_7_energy_trace_causality(annulus_ctx):
    start = time.perf_counter()
    ctx = annulus_ctx
    recipe = E.SourceRecipe("windowed_sine", {"f0": 1.5, "n_cycles": 4.0})
    C, Cp = [], []
    for res in [(20, 128), (40, 256), (80, 512)]:
        g, rec, _ = E.simulate(ctx, recipe, res)
        h1 = S.sobolev_norm(g, S.SobolevSpec(1.0))
        C.append(rec.max_energy() / h1**2)
        Cp.append(rec.trace_l2(ctx.scenario.times.M + ctx.scenario.times.T) / h1)
    spread = lambda v: (max(v) - min(v)) / min(v)

    # causality as stated: |u| <= 1e-12 where r - R1 > sqrt(lam_max) * (t - t_on) + 2h
    grid, op = E.solver_grid(ctx, (40, 256))
    dt = op.stable_dt(grid, ctx.scenario.grid.cfl)
    t = S.time_grid(dt, ctx.scenario.times.M)
    s = grid.boundary_s["inner"]
    g = recipe.build(ctx, t, s, np.ones_like(s))
    on = int(np.argmax(np.any(g.values != 0, axis=1)))
    rec = W.run(grid, op, [W.dirichlet_on(grid, "inner", g.values)], 6.0, dt=dt, snapshot_every=1)
    h = max(grid.h_phys)
    dist = (grid.q1 - grid.q1[0])[:, None] * np.ones(grid.shape)
    causal = 0.0
    for tk, u in rec.snapshots:
        far = dist > math.sqrt(op.lam_max) * max(tk - t[on], 0.0) + 2 * h
        if far.any():
            causal = max(causal, float(np.max(np.abs(u[far]))))
    # zero extension: nothing moves before the data does
    zero = bool(np.all(rec.energy[: max(on - 1, 0)] == 0.0)) and all(
        not np.any(u) for tk, u in rec.snapshots if tk < t[on] - 1e-12)
    elapsed = time.perf_counter() - start
    ok = spread(C) <= 0.2 and spread(Cp) <= 0.2 and causal <= 1e-12 and zero and elapsed <= 300
    assert report(7, ok, f"C_h spread {spread(C):.3f}, C'_h spread {spread(Cp):.3f}, "
                         f"max |u| outside cone + 2h {causal:.2e} (limit 1e-12), zero extension {zero}, "
                         f"{elapsed:.1f} s")


# ---------------------------------------------------------------- 8

def test_criterion_8_invisibility(annulus_ctx):
    start = time.perf_counter()
    sc = annulus_ctx.scenario
    ell = E.invisibility_sweep(annulus_ctx, [4, 8, 16, 32], (1.0, 3.0), s_exp=-0.5)
    gl = E.invisibility_sweep(annulus_ctx, [4, 8, 16, 32], glancing_ratios=sc.sweep.glancing_ratios, s_exp=-0.5)
    elapsed = time.perf_counter() - start
    unit = all(abs(r["norm_s"] - 1.0) <= 1e-9 for r in ell["rows"] + gl["rows"] if "norm_s" in r)
    es, gs = ell["summary"], gl["summary"]
    ok = (es["complete"] and gs["complete"] and unit and es["strictly_decreasing"]
          and es["final_over_first"] <= 0.25 and gs["strictly_decreasing"] and elapsed <= 900)
    traces = ", ".join(f"{r.get('trace', float('nan')):.3g}" for r in ell["rows"])
    gtr = ", ".join(f"{r.get('trace', float('nan')):.3g}" for r in gl["rows"])
    assert report(8, ok, f"elliptic traces [{traces}] final/first {es['final_over_first']:.2e}; "
                         f"glancing traces [{gtr}]; {elapsed:.0f} s")


# ---------------------------------------------------------------- 9

def test_criterion_9_admissible(annulus_ctx, annulus_verdict):
    res = E.admissible_sweep(annulus_ctx, E.admissible_recipes(annulus_ctx.scenario), annulus_verdict, refine=True)
    sm = res["summary"]
    base = E.SourceRecipe("windowed_sine", {"f0": 1.5, "n_cycles": 4.0})
    q0 = E.observability_quotient(annulus_ctx, base)
    scale = max(abs(E.observability_quotient(annulus_ctx, base.scaled(lam)).Q - q0.Q) / q0.Q
                for lam in (2.0, 10.0, 0.5))
    ok = (sm["n_ok"] == sm["n"] == 8 and sm["min_Q"] > 0 and sm["min_over_median"] >= 0.1
          and sm["max_refine_change"] <= 0.10 and scale <= 1e-10)
    assert report(9, ok, f"min Q {sm['min_Q']:.3f}, min/median {sm['min_over_median']:.3f}, "
                         f"max refinement change {sm['max_refine_change']:.3f}, scale invariance {scale:.1e}")


# ---------------------------------------------------------------- 10

def test_criterion_10_determinism():
    a = E.full_study(config.preset("annulus"))
    b = E.full_study(config.preset("annulus"))
    ok = a["report_hash"] == b["report_hash"]
    assert report(10, ok, f"report hash {a['report_hash'][:16]} twice" if ok else "hashes differ")
