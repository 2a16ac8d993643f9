"""Leapfrog finite differences for ``u_tt = div(A grad u)`` with Dirichlet boundary data.

Grids are logically rectangular in computational coordinates ``q`` (Cartesian
``(x, y)`` or polar ``(r, theta)``). The operator comes from the discrete energy

    E(u) = sum_edges w (u_a - u_b)^2 + cross terms = u^t K u,

built from ``J * M A M^t`` (``M = dq/dx``, ``J = det dx/dq``) at edge midpoints and
cell centres, so ``K`` is symmetric and the semi-discrete system is
``m * u'' = -K u`` with lumped node masses ``m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.integrate import trapezoid

from .errors import CFLViolation, NaNDetected, SolverError, UnsupportedDomain
from .geometry import Circle, Domain, MetricField


@dataclass(frozen=True)
class RectangleSpec:
    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0
    periodic_y: bool = False
    name: str = "rectangle"


@dataclass
class Grid:
    kind: str
    q1: np.ndarray
    q2: np.ndarray
    periodic2: bool
    X: np.ndarray
    dq: tuple
    h_phys: tuple
    boundary: dict
    boundary_s: dict
    interior: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return (len(self.q1), len(self.q2))

    @property
    def size(self):
        return len(self.q1) * len(self.q2)

    @property
    def h_min(self):
        return min(self.h_phys)

    def flat(self, i, j):
        return np.asarray(i) * len(self.q2) + np.asarray(j)

    def describe(self) -> dict:
        return {"kind": self.kind, "shape": list(self.shape), "dq": list(self.dq), "h_phys": list(self.h_phys),
                "periodic2": self.periodic2, **self.meta}


@dataclass
class Operator:
    K: sp.csr_matrix
    mass: np.ndarray
    lam_max: float
    rho_bound: float

    def apply(self, u):
        """Discrete ``div(A grad u)`` at every node (meaningful at interior nodes)."""
        return -(self.K @ u) / self.mass

    def stable_dt(self, grid: Grid, cfl: float = 0.8) -> float:
        return cfl * min(grid.h_min / math.sqrt(self.lam_max), 2.0 / math.sqrt(self.rho_bound))


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------


def _annulus_radii(domain: Domain):
    if len(domain.curves) != 2 or not all(isinstance(c, Circle) for c in domain.curves):
        return None
    inner = [c for c in domain.curves if not c.domain_inside]
    outer = [c for c in domain.curves if c.domain_inside]
    if len(inner) != 1 or len(outer) != 1:
        return None
    if not (np.allclose(inner[0].center, 0) and np.allclose(outer[0].center, 0)):
        return None
    return inner[0], outer[0]


def polar_grid(r1: float, r2: float, n_r: int, n_theta: int, names=("inner", "outer")) -> Grid:
    r = np.linspace(r1, r2, n_r + 1)
    th = np.arange(n_theta) * (2 * math.pi / n_theta)
    R, TH = np.meshgrid(r, th, indexing="ij")
    X = np.stack([R * np.cos(TH), R * np.sin(TH)], axis=-1)
    n1, n2 = len(r), len(th)
    idx = np.arange(n1 * n2).reshape(n1, n2)
    interior = np.zeros(n1 * n2, dtype=bool)
    interior[idx[1:-1, :].ravel()] = True
    dr, dth = r[1] - r[0], th[1] - th[0]
    return Grid("polar", r, th, True, X, (dr, dth), (dr, r1 * dth),
                {names[0]: idx[0, :].copy(), names[1]: idx[-1, :].copy()},
                {names[0]: r1 * th, names[1]: r2 * th}, interior,
                {"r1": r1, "r2": r2, "n_r": n_r, "n_theta": n_theta, "names": list(names)})


def cartesian_grid(spec: RectangleSpec, nx: int, ny: int) -> Grid:
    x = np.linspace(spec.x0, spec.x1, nx + 1)
    if spec.periodic_y:
        y = spec.y0 + np.arange(ny) * (spec.y1 - spec.y0) / ny
    else:
        y = np.linspace(spec.y0, spec.y1, ny + 1)
    Xg, Yg = np.meshgrid(x, y, indexing="ij")
    X = np.stack([Xg, Yg], axis=-1)
    n1, n2 = len(x), len(y)
    idx = np.arange(n1 * n2).reshape(n1, n2)
    bnd = {"left": idx[0, :].copy(), "right": idx[-1, :].copy()}
    s = {"left": y - spec.y0, "right": y - spec.y0}
    interior = np.zeros(n1 * n2, dtype=bool)
    if spec.periodic_y:
        interior[idx[1:-1, :].ravel()] = True
    else:
        bnd["bottom"] = idx[1:-1, 0].copy()
        bnd["top"] = idx[1:-1, -1].copy()
        s["bottom"] = x[1:-1] - spec.x0
        s["top"] = x[1:-1] - spec.x0
        interior[idx[1:-1, 1:-1].ravel()] = True
    dy = (y[1] - y[0])
    return Grid("cartesian", x, y, spec.periodic_y, X, (x[1] - x[0], dy), (x[1] - x[0], dy), bnd, s, interior,
                {"rect": [spec.x0, spec.x1, spec.y0, spec.y1], "nx": nx, "ny": ny})


# --------------------------------------------------------------------------
# operator
# --------------------------------------------------------------------------


def _coeffs(grid: Grid, metric: MetricField, X):
    """``J * M A M^t`` at points ``X`` (computational cometric weighted by the Jacobian)."""
    a = metric.a(X)
    if grid.kind == "cartesian":
        return a, np.ones(X.shape[:-1])
    r = np.hypot(X[..., 0], X[..., 1])
    c, s = X[..., 0] / r, X[..., 1] / r
    M = np.zeros(X.shape[:-1] + (2, 2))
    M[..., 0, 0], M[..., 0, 1] = c, s
    M[..., 1, 0], M[..., 1, 1] = -s / r, c / r
    at = np.einsum("...ik,...kl,...jl->...ij", M, a, M)
    return at * r[..., None, None], r


def _pos(grid: Grid, q1, q2):
    if grid.kind == "cartesian":
        return np.stack([q1, q2], axis=-1)
    return np.stack([q1 * np.cos(q2), q1 * np.sin(q2)], axis=-1)


def assemble(domain, metric: MetricField, resolution) -> tuple[Grid, Operator]:
    """Grid and symmetric stiffness for an annulus (polar) or a rectangle (Cartesian).

    ``resolution`` is ``(n1, n2)``: ``(n_r, n_theta)`` or ``(nx, ny)``.
    """
    n1, n2 = resolution
    if isinstance(domain, RectangleSpec):
        grid = cartesian_grid(domain, n1, n2)
    elif isinstance(domain, Domain) and _annulus_radii(domain) is not None:
        inner, outer = _annulus_radii(domain)
        grid = polar_grid(inner.radius, outer.radius, n1, n2, (inner.name, outer.name))
    else:
        name = getattr(domain, "name", type(domain).__name__)
        raise UnsupportedDomain(f"the wave solver supports annuli and rectangles, not {name!r}")
    return grid, build_operator(grid, metric)


def build_operator(grid: Grid, metric: MetricField) -> Operator:
    q1, q2 = grid.q1, grid.q2
    n1, n2 = len(q1), len(q2)
    d1, d2 = grid.dq
    idx = np.arange(n1 * n2).reshape(n1, n2)
    per = grid.periodic2
    w1 = np.ones(n1)
    w1[0] = w1[-1] = 0.5
    w2 = np.ones(n2)
    if not per:
        w2[0] = w2[-1] = 0.5
    rows, cols, vals = [], [], []

    def add(a, b, v):
        a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
        rows.append(a)
        cols.append(b)
        vals.append(np.broadcast_to(np.asarray(v, dtype=float).ravel(), a.shape))

    def add_pair(a, b, w):
        add(a, a, w)
        add(b, b, w)
        add(a, b, -w)
        add(b, a, -w)

    # direction 1 edges
    Q1m = 0.5 * (q1[:-1] + q1[1:])
    P, Q = np.meshgrid(Q1m, q2, indexing="ij")
    C, _ = _coeffs(grid, metric, _pos(grid, P, Q))
    w = C[..., 0, 0] * (d2 / d1) * w2[None, :]
    add_pair(idx[:-1, :], idx[1:, :], w)
    # direction 2 edges
    j0 = np.arange(n2) if per else np.arange(n2 - 1)
    j1 = (j0 + 1) % n2
    Q2m = q2[j0] + 0.5 * d2
    P, Q = np.meshgrid(q1, Q2m, indexing="ij")
    C, _ = _coeffs(grid, metric, _pos(grid, P, Q))
    w = C[..., 1, 1] * (d1 / d2) * w1[:, None]
    add_pair(idx[:, j0], idx[:, j1], w)
    # cross terms: 2 c12 (D1 u)(D2 u) d1 d2 per cell with cell-averaged differences
    P, Q = np.meshgrid(Q1m, Q2m, indexing="ij")
    C, _ = _coeffs(grid, metric, _pos(grid, P, Q))
    c12 = C[..., 0, 1]
    if np.any(np.abs(c12) > 1e-15):
        a00, a10 = idx[:-1][:, j0], idx[1:][:, j0]
        a01, a11 = idx[:-1][:, j1], idx[1:][:, j1]
        coef = 2.0 * c12 * d1 * d2 / (4 * d1 * d2)
        g_nodes = [(a10, 1), (a00, -1), (a11, 1), (a01, -1)]
        e_nodes = [(a01, 1), (a00, -1), (a11, 1), (a10, -1)]
        for na, sa in g_nodes:
            for nb, sb in e_nodes:
                v = 0.5 * coef * sa * sb
                add(na, nb, v)
                add(nb, na, v)
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    K = sp.coo_matrix((vals, (rows, cols)), shape=(n1 * n2, n1 * n2)).tocsr()
    K.sum_duplicates()
    Pn, Qn = np.meshgrid(q1, q2, indexing="ij")
    _, J = _coeffs(grid, metric, _pos(grid, Pn, Qn))
    mass = (J * d1 * d2 * w1[:, None] * w2[None, :]).ravel()
    # Gershgorin bound of m^{-1} K over interior rows (bounds the spectral radius)
    absK = abs(K)
    rowsum = np.asarray(absK.sum(axis=1)).ravel()
    rho = float(np.max(rowsum[grid.interior] / mass[grid.interior]))
    lam_max = float(metric.lam_max)
    return Operator(K, mass, lam_max, rho)


# --------------------------------------------------------------------------
# boundary data, trace and energy
# --------------------------------------------------------------------------


@dataclass
class DirichletData:
    """Boundary values on ``nodes`` at solver steps ``0..len(values)-1`` (zero afterwards)."""

    nodes: np.ndarray
    values: np.ndarray

    def at(self, n: int):
        if n < len(self.values):
            return self.values[n]
        return np.zeros(len(self.nodes))


def dirichlet_on(grid: Grid, boundary: str, values) -> DirichletData:
    values = np.asarray(values, dtype=float)
    nodes = grid.boundary[boundary]
    if values.ndim != 2 or values.shape[1] != len(nodes):
        raise SolverError(f"boundary data must have shape (n_steps, {len(nodes)})")
    return DirichletData(nodes, values)


def _collar_direction(grid: Grid, metric: MetricField, boundary: str):
    """Inward Euclidean normal and unit collar direction at the boundary nodes."""
    nodes = grid.boundary[boundary]
    X = grid.X.reshape(-1, 2)[nodes]
    if grid.kind == "polar":
        rhat = X / np.linalg.norm(X, axis=1, keepdims=True)
        n = rhat if boundary == grid.meta["names"][0] else -rhat
    else:
        e = {"left": (1.0, 0.0), "right": (-1.0, 0.0), "bottom": (0.0, 1.0), "top": (0.0, -1.0)}[boundary]
        n = np.broadcast_to(np.array(e), X.shape).copy()
    a = metric.a(X)
    an = np.einsum("kij,kj->ki", a, n)
    phi = np.sqrt(np.einsum("ki,ki->k", n, an))
    return n, an / phi[:, None]


class NormalTrace:
    """Collar derivative ``n_vec . grad u`` at boundary nodes from a one-sided 3-node stencil."""

    def __init__(self, grid: Grid, metric: MetricField, boundary: str, mask=None):
        self.grid = grid
        self.boundary = boundary
        nodes = grid.boundary[boundary]
        self.mask = np.ones(len(nodes), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        self.nodes = nodes[self.mask]
        self.s = grid.boundary_s[boundary][self.mask]
        n1, n2 = grid.shape
        i, j = np.divmod(self.nodes, n2)
        _, nu = _collar_direction(grid, metric, boundary)
        nu = nu[self.mask]
        X = grid.X.reshape(-1, 2)[self.nodes]
        d1, d2 = grid.dq
        if grid.kind == "polar" or boundary in ("left", "right"):
            step = 1 if boundary in (grid.meta.get("names", ["inner"])[0], "left") else -1
            self.idx = [self.nodes, grid.flat(i + step, j), grid.flat(i + 2 * step, j)]
            self.c1 = np.array([-3.0, 4.0, -1.0]) / (2 * d1) * step   # d/dq1
            if grid.periodic2:
                jp, jm = (j + 1) % n2, (j - 1) % n2
                self.t_den = np.full(len(j), 2 * d2)
            else:
                jp, jm = np.minimum(j + 1, n2 - 1), np.maximum(j - 1, 0)
                self.t_den = (jp - jm) * d2
            self.t_idx = [grid.flat(i, jp), grid.flat(i, jm)]
            if grid.kind == "polar":
                r = np.linalg.norm(X, axis=1)
                rhat = X / r[:, None]
                that = np.stack([-rhat[:, 1], rhat[:, 0]], axis=1)
                self.w_q1 = np.einsum("ki,ki->k", nu, rhat)
                self.w_q2 = np.einsum("ki,ki->k", nu, that) / r
            else:
                self.w_q1 = nu[:, 0]
                self.w_q2 = nu[:, 1]
        else:
            raise UnsupportedDomain("normal trace on top/bottom edges is not implemented")

    def __call__(self, u):
        dq1 = self.c1[0] * u[self.idx[0]] + self.c1[1] * u[self.idx[1]] + self.c1[2] * u[self.idx[2]]
        dq2 = (u[self.t_idx[0]] - u[self.t_idx[1]]) / self.t_den
        return self.w_q1 * dq1 + self.w_q2 * dq2

    def s_weights(self):
        """Quadrature weights along the boundary (periodic closed curves use uniform weights)."""
        g = self.grid
        if g.periodic2 and len(self.s) == len(g.boundary_s[self.boundary]):
            L = (g.boundary_s[self.boundary][1] - g.boundary_s[self.boundary][0]) * len(self.s)
            return np.full(len(self.s), L / len(self.s))
        if len(self.s) == 1:
            return np.ones(1)
        return _trapezoid_weights(self.s)


def _trapezoid_weights(s):
    w = np.zeros(len(s))
    ds = np.diff(s)
    w[:-1] += ds / 2
    w[1:] += ds / 2
    return w


def energy(op: Operator, u_next, u_curr, dt: float) -> float:
    """Staggered leapfrog energy ``|du/dt|_m^2 + u_next^t K u_curr`` at the half step."""
    v = (u_next - u_curr) / dt
    return float(np.dot(op.mass * v, v) + np.dot(u_next, op.K @ u_curr))


@dataclass
class TraceRecord:
    dt: float
    n_steps: int
    energy_times: np.ndarray
    energy: np.ndarray
    trace_times: np.ndarray
    trace: np.ndarray
    trace_s: np.ndarray
    trace_ws: np.ndarray
    grid: dict
    meta: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)
    final: tuple | None = None

    def trace_l2(self, t_max: float | None = None) -> float:
        t = self.trace_times
        y = self.trace
        if t_max is not None:
            keep = t <= t_max + 1e-12
            t, y = t[keep], y[keep]
        if len(t) < 2:
            return 0.0
        per_t = (y * y) @ self.trace_ws
        return float(math.sqrt(max(trapezoid(per_t, t), 0.0)))

    def max_energy(self) -> float:
        return float(np.max(self.energy)) if len(self.energy) else 0.0

    def to_csv(self) -> str:
        lines = [f"# dt={self.dt!r} steps={self.n_steps} grid={self.grid}"]
        lines += [f"# {k}={v}" for k, v in self.meta.items()]
        lines.append("# energy\nt,E")
        lines += [f"{t:.12g},{e:.17g}" for t, e in zip(self.energy_times, self.energy)]
        lines.append("# trace\nt," + ",".join(f"s={s:.9g}" for s in self.trace_s))
        for t, row in zip(self.trace_times, self.trace):
            lines.append(f"{t:.12g}," + ",".join(f"{v:.17g}" for v in row))
        return "\n".join(lines) + "\n"


def run(grid: Grid, op: Operator, data: list, horizon: float, dt: float | None = None, cfl: float = 0.8,
        observe: tuple | None = None, metric: MetricField | None = None,
        forcing: Callable | None = None, initial: tuple | None = None,
        boundary_override: Callable | None = None, snapshot_every: int = 0,
        keep_final: bool = False) -> TraceRecord:
    """Leapfrog from zero data up to ``horizon``.

    ``data`` is a list of :class:`DirichletData` (all other boundary nodes are held at
    zero). ``observe = (boundary name, mask)`` selects the trace nodes.  ``forcing``,
    ``initial = (u0(X), v0(X))`` and ``boundary_override(t, X)`` exist for manufactured
    solutions only.
    """
    if dt is None:
        dt = op.stable_dt(grid, cfl)
    limit = min(0.9 * grid.h_min / math.sqrt(op.lam_max), 2.0 / math.sqrt(op.rho_bound))
    if dt > limit * (1 + 1e-12):
        raise CFLViolation(f"dt = {dt:.4g} exceeds the stable limit {limit:.4g}")
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    N = grid.size
    Xf = grid.X.reshape(-1, 2)
    interior = grid.interior
    bnodes = np.nonzero(~interior)[0]
    Xb = Xf[bnodes]
    m_int = op.mass
    tracer = None
    if observe is not None:
        if metric is None:
            raise SolverError("metric is required to evaluate the normal trace")
        tracer = NormalTrace(grid, metric, observe[0], observe[1] if len(observe) > 1 else None)

    def boundary_values(n, u):
        t = n * dt
        if boundary_override is not None:
            u[bnodes] = boundary_override(t, Xb)
            return
        u[bnodes] = 0.0
        for d in data:
            u[d.nodes] = d.at(n)

    def force(n):
        return forcing(n * dt, Xf) if forcing is not None else 0.0

    u_prev = np.zeros(N)
    if initial is not None:
        u_prev = np.asarray(initial[0](Xf), dtype=float).copy()
    boundary_values(0, u_prev)
    Ku = op.K @ u_prev
    u = u_prev.copy()
    if initial is not None:
        v0 = np.asarray(initial[1](Xf), dtype=float)
        acc = -Ku / m_int + force(0)
        u[interior] = u_prev[interior] + dt * v0[interior] + 0.5 * dt * dt * acc[interior]
    boundary_values(1, u)
    energies = [energy(op, u, u_prev, dt)]
    traces = []
    if tracer is not None:
        traces.append(tracer(u_prev))
        traces.append(tracer(u))
    snaps = []
    for n in range(1, n_steps):
        Ku = op.K @ u
        u_next = np.empty(N)
        acc = -Ku / m_int
        if forcing is not None:
            acc = acc + force(n)
        u_next[interior] = 2 * u[interior] - u_prev[interior] + dt * dt * acc[interior]
        boundary_values(n + 1, u_next)
        v = (u_next - u) / dt
        energies.append(float(np.dot(m_int * v, v) + np.dot(u_next, Ku)))
        if tracer is not None:
            traces.append(tracer(u_next))
        if snapshot_every and (n + 1) % snapshot_every == 0:
            snaps.append(((n + 1) * dt, u_next.reshape(grid.shape).copy()))
        if n % 64 == 0 and not np.all(np.isfinite(u_next)):
            raise NaNDetected(f"non-finite values at step {n + 1}", step=n + 1)
        u_prev, u = u, u_next
    if not np.all(np.isfinite(u)):
        raise NaNDetected(f"non-finite values at step {n_steps}", step=n_steps)
    etimes = (np.arange(len(energies)) + 0.5) * dt
    if tracer is not None:
        tr = np.array(traces)
        ttimes = np.arange(len(traces)) * dt
        ts, ws = tracer.s, tracer.s_weights()
    else:
        tr, ttimes, ts, ws = np.zeros((0, 0)), np.zeros(0), np.zeros(0), np.zeros(0)
    return TraceRecord(dt, n_steps, etimes, np.array(energies), ttimes, tr, ts, ws, grid.describe(),
                       snapshots=snaps, final=(u_prev, u) if keep_final else None)


def normal_trace(record: TraceRecord, t_max: float | None = None):
    """Sampled collar derivative on the observed nodes and its space-time L2 norm."""
    return record.trace, record.trace_l2(t_max)
