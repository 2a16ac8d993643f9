import math

import numpy as np
import pytest
import scipy.sparse as sp

from sidewise import config, sources as S, wavesim as W
from sidewise.errors import CFLViolation, SolverError, UnsupportedDomain
from sidewise.experiments import SourceRecipe, build_context, simulate
from sidewise.geometry import ConstantMetric, IdentityMetric, LinearX1Metric, annulus, peanut

STRIP = W.RectangleSpec(0.0, 1.0, 0.0, 0.1, periodic_y=True)


def pulse(t):
    return S.windowed_sine(t, 2.0, 1.0, 0.0)


def strip_run(nx, horizon, observe=True, **kw):
    grid, op = W.assemble(STRIP, IdentityMetric(), (nx, 4))
    dt = op.stable_dt(grid, 0.8)
    tt = np.arange(int(math.ceil(horizon / dt)) + 1) * dt
    vals = np.repeat(pulse(tt)[:, None], 4, axis=1)
    rec = W.run(grid, op, [W.dirichlet_on(grid, "left", vals)], horizon, dt=dt,
                observe=("right", None) if observe else None, metric=IdentityMetric(), **kw)
    return grid, rec


# ---------------------------------------------------------------- operator

def test_cartesian_identity_is_five_point_laplacian():
    spec = W.RectangleSpec(0.0, 1.0, 0.0, 1.0)
    grid, op = W.assemble(spec, IdentityMetric(), (8, 8))
    h = 1 / 8
    rng = np.random.default_rng(0)
    u = rng.normal(size=grid.size).reshape(grid.shape)
    lap = (u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2] - 4 * u[1:-1, 1:-1]) / h**2
    got = op.apply(u.ravel()).reshape(grid.shape)[1:-1, 1:-1]
    assert np.allclose(got, lap, rtol=1e-12, atol=1e-9)


@pytest.mark.parametrize("metric", [IdentityMetric(), ConstantMetric([[2.0, 0.3], [0.3, 1.0]]),
                                    LinearX1Metric(0.3, 2, (-2.5, 2.5))], ids=lambda m: m.name)
def test_operator_symmetric_and_kills_constants(metric):
    grid, op = W.assemble(annulus(1.0, 2.0), metric, (8, 32))
    assert abs(op.K - op.K.T).max() <= 1e-12 * abs(op.K).max()
    assert np.all(op.mass > 0)
    assert np.max(np.abs(op.apply(np.ones(grid.size))[grid.interior])) <= 1e-9
    # positive semidefinite
    w = sp.linalg.eigsh(op.K.asfptype(), k=1, which="SA", return_eigenvectors=False)
    assert w[0] >= -1e-9 * abs(op.K).max()


def test_log_r_residual_is_second_order():
    res = []
    for n1 in [32, 64, 128]:
        grid, op = W.assemble(annulus(1.0, 2.0), IdentityMetric(), (n1, 16))
        X = grid.X.reshape(-1, 2)
        u = np.log(np.hypot(X[:, 0], X[:, 1]))
        res.append(np.max(np.abs(op.apply(u)[grid.interior])))
    orders = [math.log2(res[i] / res[i + 1]) for i in range(2)]
    assert min(orders) >= 1.9


def test_unsupported_domain():
    with pytest.raises(UnsupportedDomain):
        W.assemble(peanut(), IdentityMetric(), (8, 8))


def test_cfl_guard_and_data_shape():
    grid, op = W.assemble(annulus(1.0, 2.0), IdentityMetric(), (8, 32))
    with pytest.raises(CFLViolation):
        W.run(grid, op, [], 1.0, dt=2 * op.stable_dt(grid, 0.8))
    with pytest.raises(SolverError):
        W.dirichlet_on(grid, "inner", np.zeros((4, 5)))


# ---------------------------------------------------------------- run

def test_zero_data_gives_zero_records():
    grid, op = W.assemble(annulus(1.0, 2.0), IdentityMetric(), (8, 32))
    rec = W.run(grid, op, [W.dirichlet_on(grid, "inner", np.zeros((10, 32)))], 2.0, observe=("outer", None),
                metric=IdentityMetric(), keep_final=True)
    assert rec.max_energy() == 0.0 and rec.trace_l2() == 0.0
    assert not np.any(rec.final[1])


def test_manufactured_solution_is_second_order():
    A = np.array([[2.0, 0.3], [0.3, 1.0]])
    metric = ConstantMetric(A)

    def f(X):
        return np.sin(X[:, 0]) * np.cos(X[:, 1])

    def Af(X):
        x, y = X[:, 0], X[:, 1]
        fxx = -np.sin(x) * np.cos(y)
        fxy = -np.cos(x) * np.sin(y)
        return A[0, 0] * fxx + 2 * A[0, 1] * fxy + A[1, 1] * fxx

    errs = []
    for n in [(10, 64), (20, 128), (40, 256)]:
        grid, op = W.assemble(annulus(1.0, 2.0), metric, n)
        dt = op.stable_dt(grid)
        rec = W.run(grid, op, [], 1.0, dt=dt, initial=(f, lambda X: np.zeros(len(X))),
                    forcing=lambda t, X: -math.cos(t) * (f(X) + Af(X)),
                    boundary_override=lambda t, X: math.cos(t) * f(X), keep_final=True)
        e = rec.final[1] - math.cos(rec.n_steps * dt) * f(grid.X.reshape(-1, 2))
        errs.append(math.sqrt(np.sum(op.mass * e * e)))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 1.9


def test_dalembert_field_before_reflection():
    errs = []
    for nx in [50, 100, 200]:
        grid, rec = strip_run(nx, 0.9, observe=False, keep_final=True)
        t = rec.n_steps * rec.dt
        u = rec.final[1].reshape(grid.shape)[:, 0]
        errs.append(math.sqrt(np.mean((u - pulse(t - grid.q1)) ** 2)))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 1.9


def test_dalembert_trace_at_far_wall():
    # u = g(t - x) - g(t - 2 + x) near x = 1, so the inward derivative there is 2 g'(t - 1)
    rel = []
    for nx in [200, 400]:
        _, rec = strip_run(nx, 1.8)
        eps = 1e-6
        dg = (pulse(rec.trace_times - 1 + eps) - pulse(rec.trace_times - 1 - eps)) / (2 * eps)
        rel.append(np.linalg.norm(rec.trace[:, 0] - 2 * dg) / np.linalg.norm(2 * dg))
    assert rel[1] <= 0.01
    assert math.log2(rel[0] / rel[1]) >= 1.85


def test_normal_trace_of_linear_field():
    metric = ConstantMetric([[2.0, 0.3], [0.3, 1.0]])
    grid, _ = W.assemble(annulus(1.0, 2.0), metric, (16, 256))
    X = grid.X.reshape(-1, 2)
    for name in ("inner", "outer"):
        tr = W.NormalTrace(grid, metric, name)
        _, nu = W._collar_direction(grid, metric, name)
        # radial stencil is exact on linear fields; the angular difference is second order
        assert np.max(np.abs(tr(X[:, 0]) - nu[:, 0])) <= grid.dq[1] ** 2 / 6


def test_energy_conserved_without_forcing():
    spec = W.RectangleSpec(0.0, 1.0, 0.0, 1.0, periodic_y=True)
    grid, op = W.assemble(spec, IdentityMetric(), (32, 32))
    rec = W.run(grid, op, [], 2.0, initial=(lambda X: np.sin(math.pi * X[:, 0]) * np.cos(2 * math.pi * X[:, 1]),
                                            lambda X: np.zeros(len(X))))
    E = rec.energy
    assert np.max(np.abs(E - E[0])) <= 1e-3 * E[0]


def test_energy_is_zero_before_the_source_and_flat_after():
    ctx = build_context(config.preset("annulus"))
    g, rec, _ = simulate(ctx, SourceRecipe("windowed_sine", {"f0": 1.5, "n_cycles": 4}), (20, 128))
    first = np.argmax(np.any(g.values != 0, axis=1))
    assert first > 0
    assert np.all(rec.energy[: first - 1] == 0.0)
    last = len(g.t) - 1 - np.argmax(np.any(g.values[::-1] != 0, axis=1))
    after = rec.energy_times > g.t[last] + rec.dt
    E = rec.energy[after]
    span = rec.energy_times[after][-1] - rec.energy_times[after][0]
    assert (E.max() - E.min()) / E.max() <= 1e-3 * span


def test_trace_refinement_changes_little():
    ctx = build_context(config.preset("annulus"))
    r = SourceRecipe("windowed_sine", {"f0": 1.5, "n_cycles": 4})
    a = simulate(ctx, r, (40, 256))[1].trace_l2()
    b = simulate(ctx, r, (80, 512))[1].trace_l2()
    assert abs(a - b) / b <= 0.02


def test_leapfrog_dependence_is_one_cell_per_step():
    grid, op = W.assemble(annulus(1.0, 2.0), LinearX1Metric(0.3, 2, (-2.5, 2.5)), (40, 64))
    vals = np.ones((400, 64))
    rec = W.run(grid, op, [W.dirichlet_on(grid, "inner", vals)], 20 * op.stable_dt(grid), snapshot_every=1)
    for k, (_, u) in enumerate(rec.snapshots):
        n = k + 2                      # snapshot of time level n
        assert np.all(u[n:, :] == 0.0)
        assert np.any(u[n - 1, :] != 0.0)


def test_trace_record_csv_has_header():
    grid, rec = strip_run(20, 0.3)
    text = rec.to_csv()
    assert text.startswith("# dt=") and "# energy" in text and "# trace" in text
