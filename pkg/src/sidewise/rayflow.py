"""Generalized bicharacteristics: interior flow, reflection, diffractive touches and gliding.

Rays are parametrized by physical time: the Hamiltonian field is divided by
``2 tau``, so ``dx/dt = -A xi / tau`` and ``dxi_k/dt = xi^t dA_k xi / (2 tau)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import DenominatorDegenerate, MissedEvent, RayError, StiffFailure, TauDegenerate
from .geometry import BoundaryRegion, Domain, MetricField, normal_curvature
from .symbols import (
    BoundaryCovector,
    Classification,
    GlancingKind,
    PhasePoint,
    Region,
    boundary_covector_of,
    classify,
    join_covector,
    tangential_lift,
)


@dataclass(frozen=True)
class RayTolerances:
    ode: float = 1e-10
    dt_max: float = 0.25
    dt_min: float = 1e-10
    glancing: float = 1e-7
    tangency_band: float = 1e-7
    boundary: float = 1e-10
    dwell: float = 1e-6
    near_glancing_factor: float = 10.0
    sample_spacing: float = 0.02
    dn_method: str = "analytic"


class EventKind(str, Enum):
    HYPERBOLIC_REFLECTION = "HyperbolicReflection"
    DIFFRACTIVE_TOUCH = "DiffractiveTouch"
    GLIDING_ENTRY = "GlidingEntry"
    GLIDING_EXIT = "GlidingExit"
    REGION_HIT = "RegionHit"
    TIME_EXPIRED = "TimeExpired"


@dataclass(frozen=True)
class RayEvent:
    kind: EventKind
    t: float
    x: np.ndarray
    tau: float
    xi: np.ndarray
    curve: str | None = None
    s: float | None = None
    xi_t: float | None = None
    xi_n: float | None = None
    classification: Classification | None = None
    label: str | None = None
    flagged: bool = False
    note: str = ""

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "t": self.t, "x": [float(v) for v in self.x]}
        if self.curve is not None:
            d.update(curve=self.curve, s=self.s, xi_t=self.xi_t, xi_n=self.xi_n)
        if self.classification is not None:
            d["classification"] = self.classification.to_dict()
        if self.label is not None:
            d["label"] = self.label
        if self.flagged:
            d["flagged"] = True
        if self.note:
            d["note"] = self.note
        return d


@dataclass
class Arc:
    regime: str
    t: list = field(default_factory=list)
    x: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    xi: list = field(default_factory=list)

    def add(self, t, x, tau, xi):
        self.t.append(float(t))
        self.x.append(np.asarray(x, dtype=float).copy())
        self.tau.append(float(tau))
        self.xi.append(np.asarray(xi, dtype=float).copy())

    def arrays(self):
        return (np.array(self.t), np.array(self.x).reshape(-1, 2), np.array(self.tau),
                np.array(self.xi).reshape(-1, 2))


@dataclass
class RayPath:
    initial: dict
    arcs: list = field(default_factory=list)
    events: list = field(default_factory=list)
    projection_shifts: list = field(default_factory=list)
    max_abs_symbol: float = 0.0
    t_end: float = 0.0
    stopped: str = ""

    @property
    def flagged(self) -> bool:
        return any(e.flagged for e in self.events)

    def events_of(self, kind: EventKind) -> list:
        return [e for e in self.events if e.kind is kind]

    def samples(self):
        """All dense samples as one array of rows ``t x1 x2 tau xi1 xi2`` plus regime labels."""
        rows, regimes = [], []
        for arc in self.arcs:
            t, x, tau, xi = arc.arrays()
            if len(t):
                rows.append(np.column_stack([t, x, tau, xi]))
                regimes += [arc.regime] * len(t)
        if not rows:
            return np.zeros((0, 6)), []
        return np.vstack(rows), regimes

    def export_text(self) -> str:
        data, regimes = self.samples()
        lines = ["# t x1 x2 tau xi1 xi2 regime"]
        for row, reg in zip(data, regimes):
            lines.append(" ".join(f"{v:.15g}" for v in row) + f" {reg}")
        lines.append("# events")
        for e in self.events:
            cls = e.classification.label if e.classification is not None else "-"
            lines.append(f"{e.kind.value} t={e.t:.15g} x1={e.x[0]:.15g} x2={e.x[1]:.15g} "
                         f"curve={e.curve or '-'} s={e.s if e.s is not None else '-'} class={cls} "
                         f"label={e.label or '-'} flagged={int(e.flagged)}")
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {"initial": self.initial, "t_end": self.t_end, "stopped": self.stopped,
                "events": [e.to_dict() for e in self.events], "flagged": self.flagged}


@dataclass(frozen=True)
class RayState:
    phase: PhasePoint
    regime: str = "interior"
    boundary: BoundaryCovector | None = None


# --------------------------------------------------------------------------
# Dormand-Prince 5(4)
# --------------------------------------------------------------------------

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def _dp_step(f, y, h, k1):
    ks = [k1]
    for i in range(1, 7):
        yi = y + h * sum(a * k for a, k in zip(_A[i], ks))
        ks.append(f(yi))
    K = np.array(ks)
    y5 = y + h * (_B5 @ K)
    err = h * ((_B5 - _B4) @ K)
    return y5, err, ks[-1]


@dataclass
class DenseStep:
    """Cubic Hermite dense output over one accepted step."""

    t0: float
    t1: float
    y0: np.ndarray
    y1: np.ndarray
    f0: np.ndarray
    f1: np.ndarray

    def __call__(self, t):
        h = self.t1 - self.t0
        th = (np.asarray(t, dtype=float) - self.t0) / h
        th = th[..., None] if np.ndim(th) else th
        h00 = (1 + 2 * th) * (1 - th) ** 2
        h10 = th * (1 - th) ** 2
        h01 = th * th * (3 - 2 * th)
        h11 = th * th * (th - 1)
        return h00 * self.y0 + h10 * h * self.f0 + h01 * self.y1 + h11 * h * self.f1

    def derivative(self, t):
        h = self.t1 - self.t0
        th = (np.asarray(t, dtype=float) - self.t0) / h
        th = th[..., None] if np.ndim(th) else th
        d00 = 6 * th * (th - 1) / h
        d10 = (1 - th) * (1 - 3 * th)
        d01 = -6 * th * (th - 1) / h
        d11 = th * (3 * th - 2)
        return d00 * self.y0 + d10 * self.f0 + d01 * self.y1 + d11 * self.f1


def _interior_rhs(metric: MetricField, tau: float):
    ident = metric.is_identity

    def f(y):
        x, xi = y[:2], y[2:]
        if ident:
            return np.concatenate([-xi / tau, np.zeros(2)])
        a = metric.a(x)
        da = metric.grad_a(x)
        return np.concatenate([-(a @ xi) / tau, np.einsum("i,kij,j->k", xi, da, xi) / (2 * tau)])

    return f


def _project(y, tau, metric):
    """Project onto ``p = 0`` by rescaling xi, then renormalize ``|(tau, xi)| = 1``."""
    x, xi = y[:2], y[2:]
    q = float(xi @ metric.a(x) @ xi)
    xi_p = xi * (abs(tau) / math.sqrt(q))
    shift = float(np.linalg.norm(xi_p - xi))
    nrm = math.sqrt(tau * tau + float(xi_p @ xi_p))
    return np.concatenate([x, xi_p / nrm]), tau / nrm, shift


def integrate_interior(state: RayState, metric: MetricField, dt_max: float, tol: RayTolerances = RayTolerances(),
                       h_try: float | None = None):
    """One accepted adaptive step of the interior flow.

    Returns ``(new state, dense output, projection shift, suggested next step)``.
    """
    p = state.phase
    if abs(p.tau) < 1e-6:
        raise TauDegenerate(f"|tau| = {abs(p.tau):.3e} cannot parametrize time")
    f = _interior_rhs(metric, p.tau)
    y = np.concatenate([p.x, p.xi])
    k1 = f(y)
    h = min(dt_max, h_try or dt_max)
    while True:
        if h < tol.dt_min:
            raise StiffFailure(f"step size collapsed below {tol.dt_min:g}")
        y5, err, k7 = _dp_step(f, y, h, k1)
        scale = tol.ode + tol.ode * np.maximum(np.abs(y), np.abs(y5))
        e = float(np.max(np.abs(err) / scale))
        if e <= 1.0:
            break
        h *= max(0.2, 0.9 * e ** -0.2)
    dense = DenseStep(p.t, p.t + h, y, y5, k1, k7)
    yp, tau_new, shift = _project(y5, p.tau, metric)
    grow = 5.0 if e == 0 else min(5.0, max(0.2, 0.9 * e ** -0.2))
    new = RayState(PhasePoint(p.t + h, yp[:2], tau_new, yp[2:]))
    return new, dense, shift, min(dt_max, h * grow)


def _restep(metric, tau, y0, delta):
    """Single Dormand-Prince step of length ``delta`` from ``y0`` (used to polish event times)."""
    f = _interior_rhs(metric, tau)
    y5, _, k7 = _dp_step(f, y0, delta, f(y0))
    return y5, k7


def detect_boundary_event(dense: DenseStep, domain: Domain, t_from: float, tol: RayTolerances = RayTolerances()):
    """First boundary interaction of the dense arc after ``t_from``.

    Returns ``None`` or ``(t*, 'crossing' | 'touch')``. The time is located on the
    Hermite interpolant; callers polish it against the integrator.
    """
    t0, t1 = max(dense.t0, t_from), dense.t1
    if t1 <= t0:
        return None
    length = float(np.linalg.norm(dense.y1[:2] - dense.y0[:2]))
    n = max(8, int(math.ceil(length / tol.sample_spacing)) + 1)
    ts = np.linspace(t0, t1, n)
    xs = dense(ts)[:, :2]
    vs = dense.derivative(ts)[:, :2]
    d, grad, _, _ = domain.distance_and_gradient(xs)
    dd = np.einsum("ij,ij->i", grad, vs)

    def dist(t):
        return float(domain.distance_and_gradient(dense(t)[:2])[0][0])

    def ddist(t):
        dv, g, _, _ = domain.distance_and_gradient(dense(t)[:2])
        return float(g[0] @ dense.derivative(t)[:2])

    if d[0] < -tol.boundary:
        raise MissedEvent(f"arc starts outside the domain (d = {d[0]:.3e}) at t = {t0:.9g}")
    for j in range(n - 1):
        if d[j + 1] < 0.0:
            # a dip inside the interval could precede the end-point crossing
            a = ts[j]
            if dd[j] < 0 < dd[j + 1]:
                tm = brentq(ddist, ts[j], ts[j + 1], xtol=1e-15)
                if dist(tm) < 0:
                    return brentq(dist, a, tm, xtol=1e-15), "crossing"
            return brentq(dist, a, ts[j + 1], xtol=1e-15) if d[j] > 0 else ts[j], "crossing"
        if dd[j] < 0.0 <= dd[j + 1]:
            tm = brentq(ddist, ts[j], ts[j + 1], xtol=1e-15) if dd[j + 1] > 0 else ts[j + 1]
            dm = dist(tm)
            if dm < 0.0:
                return brentq(dist, ts[j], tm, xtol=1e-15), "crossing"
            if dm <= tol.tangency_band:
                return tm, "touch"
    return None


def reflect_covector(xi, chart) -> np.ndarray:
    """Negate the collar-normal component of ``xi`` keeping ``xi . T``."""
    xi_n = float(xi @ chart.n_vec)
    return xi - 2.0 * xi_n * chart.grad_xn


# --------------------------------------------------------------------------
# tracer
# --------------------------------------------------------------------------


class _Stop(Exception):
    pass


class _Tracer:
    def __init__(self, domain, metric, t_max, watch, tol, stop):
        self.domain = domain
        self.metric = metric
        self.t_max = float(t_max)
        self.watch = list(watch or [])
        self.tol = tol
        self.stop = stop
        self.path = None
        self.t_block = -math.inf

    # ----- bookkeeping -----
    def emit(self, event: RayEvent):
        self.path.events.append(event)
        if self.stop is not None and self.stop(event, self.path):
            self.path.stopped = f"stop at {event.kind.value}"
            raise _Stop

    def _classify(self, b):
        return classify(b, self.domain, self.metric, self.tol.glancing, method=self.tol.dn_method)

    def region_hits(self, t, x, tau, xi, curve, s, xi_t, xi_n, cls):
        for reg in self.watch:
            if reg.curve != curve:
                continue
            L = self.domain.curve(curve).length
            if bool(reg.contains(s, L, closed=True)):
                self.emit(RayEvent(EventKind.REGION_HIT, t, x, tau, xi, curve, s, xi_t, xi_n, cls, reg.label,
                                   flagged=self._near_glancing(cls)))

    def _near_glancing(self, cls):
        return cls.region is Region.HYPERBOLIC and cls.r0 <= self.tol.near_glancing_factor * self.tol.glancing

    def record_symbol(self, x, tau, xi):
        p = tau * tau - float(xi @ self.metric.a(x) @ xi)
        self.path.max_abs_symbol = max(self.path.max_abs_symbol, abs(p))

    # ----- boundary handling -----
    def boundary_event(self, phase: PhasePoint, mode: str):
        """Handle a boundary interaction; returns the next state (interior or gliding)."""
        curve, s, _ = self.domain.boundary_project(phase.x, check_collar=False)
        b, xi_n = boundary_covector_of(phase, self.domain, self.metric, curve, s)
        cls = self._classify(b)
        t, x, tau, xi = phase.t, phase.x, phase.tau, phase.xi
        self.t_block = t + self.tol.dwell
        if cls.region is Region.HYPERBOLIC:
            if mode == "touch":
                # closest approach with a transversal covector cannot happen; treat as a miss
                return RayState(phase)
            chart = self.domain.chart(curve, s, self.metric)
            xi_new = reflect_covector(xi, chart)
            flagged = self._near_glancing(cls)
            self.emit(RayEvent(EventKind.HYPERBOLIC_REFLECTION, t, x, tau, xi, curve, s, b.xi_t, xi_n, cls,
                               flagged=flagged))
            self.region_hits(t, x, tau, xi, curve, s, b.xi_t, xi_n, cls)
            return RayState(PhasePoint(t, x, tau, xi_new))
        if cls.region is Region.ELLIPTIC:
            raise RayError(f"characteristic ray met the boundary at an elliptic point (r0 = {cls.r0:.3e})",
                           partial_path=self.path)
        if cls.kind is GlancingKind.STRICTLY_GLIDING:
            return self.enter_gliding(b, cls, x)
        note = "degenerate contact" if cls.kind is GlancingKind.DEGENERATE else ""
        self.emit(RayEvent(EventKind.DIFFRACTIVE_TOUCH, t, x, tau, xi, curve, s, b.xi_t, xi_n, cls,
                           flagged=cls.kind is GlancingKind.DEGENERATE, note=note))
        self.region_hits(t, x, tau, xi, curve, s, b.xi_t, xi_n, cls)
        return RayState(phase)

    def enter_gliding(self, b: BoundaryCovector, cls, x):
        lift = tangential_lift(b, self.domain, self.metric)
        self.emit(RayEvent(EventKind.GLIDING_ENTRY, b.t, lift.x, b.tau, lift.xi, b.curve, b.s, b.xi_t, 0.0, cls))
        self.region_hits(b.t, lift.x, b.tau, lift.xi, b.curve, b.s, b.xi_t, 0.0, cls)
        return RayState(lift, "gliding", b)

    # ----- gliding -----
    def _h(self, curve, s):
        return self.domain.chart(curve, s, self.metric).h

    def glide(self, state: RayState):
        b = state.boundary
        curve = b.curve
        c = self.domain.curve(curve)
        L = c.length
        tau = b.tau
        direction = -math.copysign(1.0, b.xi_t / tau)   # sign of ds/dt
        sigma = math.copysign(1.0, b.xi_t)
        metric = self.metric
        ident = metric.is_identity
        denom = -2.0  # H_{x_n}^2 p in collar coordinates with unit conormal
        if abs(denom) < 1e-9:
            raise DenominatorDegenerate("gliding field denominator vanishes", partial_path=self.path)

        def speed(s):
            return 1.0 if ident else math.sqrt(self._h(curve, s))

        def f(y):
            return np.array([direction * speed(y[0])])

        def margin(s):
            return float(normal_curvature(self.domain, curve, np.mod(s, L), metric))

        arc = Arc("gliding")
        self.path.arcs.append(arc)
        t = b.t
        y = np.array([b.s])
        h = self.tol.dt_max

        def phase_at(tt, s):
            s = float(np.mod(s, L))
            hh = self._h(curve, s)
            xi_t = sigma * abs(tau) / math.sqrt(hh)
            bb = BoundaryCovector(curve, s, tt, tau, xi_t)
            return bb, tangential_lift(bb, self.domain, metric)

        _, ph = phase_at(t, y[0])
        arc.add(t, ph.x, tau, ph.xi)
        while True:
            if t >= self.t_max - 1e-15:
                return None
            step = min(h, self.t_max - t)
            k1 = f(y)
            while True:
                y5, err, k7 = _dp_step(f, y, step, k1)
                e = float(abs(err[0]) / (self.tol.ode * (1 + abs(y5[0]))))
                if e <= 1.0:
                    break
                step *= max(0.2, 0.9 * e ** -0.2)
                if step < self.tol.dt_min:
                    raise StiffFailure("gliding step collapsed", partial_path=self.path)
            dense = DenseStep(t, t + step, y, y5, k1, k7)
            n = max(8, int(math.ceil(abs(y5[0] - y[0]) / self.tol.sample_spacing)) + 1)
            ts = np.linspace(t, t + step, n)
            ss = dense(ts)[:, 0]
            ms = np.array([margin(v) for v in ss])
            t_exit = None
            bad = np.nonzero(ms >= 0.0)[0]
            if len(bad):
                j = bad[0]
                if j == 0:
                    t_exit = t
                else:
                    t_exit = brentq(lambda tt: margin(dense(tt)[0]), ts[j - 1], ts[j], xtol=1e-14)
            t_end = t_exit if t_exit is not None else t + step
            # region entries inside [t, t_end]
            self._gliding_region_entries(dense, curve, L, direction, t, t_end, phase_at, y[0])
            for tt in ts[ts <= t_end]:
                _, ph = phase_at(tt, dense(tt)[0])
                arc.add(tt, ph.x, tau, ph.xi)
            if t_exit is not None:
                bb, ph = phase_at(t_exit, dense(t_exit)[0])
                cls = self._classify(bb)
                self.emit(RayEvent(EventKind.GLIDING_EXIT, t_exit, ph.x, tau, ph.xi, curve, bb.s, bb.xi_t, 0.0, cls))
                self.t_block = t_exit + self.tol.dwell
                return RayState(ph)
            t = t + step
            y = y5
            h = min(self.tol.dt_max, step * (5.0 if e == 0 else min(5.0, 0.9 * e ** -0.2)))

    def _gliding_region_entries(self, dense, curve, L, direction, t0, t1, phase_at, s_start):
        s0 = float(dense(t0)[0])
        s1 = float(dense(t1)[0])
        hits = []
        for reg in self.watch:
            if reg.curve != curve or reg.is_full(L):
                continue
            for a, b in reg.intervals:
                edge = a if direction > 0 else b
                lo, hi = (s0, s1) if direction > 0 else (s1, s0)
                m = math.ceil((lo - edge) / L)
                target = edge + m * L
                if lo < target <= hi:
                    tt = brentq(lambda u: dense(u)[0] - target, t0, t1, xtol=1e-14) if target != s1 else t1
                    if tt > t0:
                        hits.append((tt, reg))
        for tt, reg in sorted(hits, key=lambda p: p[0]):
            bb, ph = phase_at(tt, dense(tt)[0])
            cls = self._classify(bb)
            self.emit(RayEvent(EventKind.REGION_HIT, tt, ph.x, bb.tau, ph.xi, curve, bb.s, bb.xi_t, 0.0, cls,
                               reg.label))

    # ----- interior -----
    def polish(self, dense: DenseStep, t_guess: float, mode: str, tau: float):
        """Refine an event time against the integrator by re-stepping from the step start."""
        y0 = dense.y0
        t = t_guess
        y, fy = _restep(self.metric, tau, y0, t - dense.t0) if t > dense.t0 else (y0, dense.f0)
        for _ in range(8):
            d, g, _, _ = self.domain.distance_and_gradient(y[:2])
            d = float(d[0])
            v = fy[:2]
            dd = float(g[0] @ v)
            if mode == "crossing":
                if abs(d) <= 1e-11 or dd == 0.0:
                    break
                t_new = t - d / dd
            else:
                # Newton on the radial velocity using the Hermite curvature as slope
                eps = 1e-7 * (dense.t1 - dense.t0)
                d2 = (float(self.domain.distance_and_gradient(dense(t + eps)[:2])[1][0] @ dense.derivative(t + eps)[:2])
                      - float(self.domain.distance_and_gradient(dense(t - eps)[:2])[1][0] @ dense.derivative(t - eps)[:2])) / (2 * eps)
                if abs(dd) < 1e-13 or d2 <= 0:
                    break
                t_new = t - dd / d2
            t_new = min(max(t_new, dense.t0), dense.t1)
            if abs(t_new - t) < 1e-16:
                break
            t = t_new
            y, fy = _restep(self.metric, tau, y0, t - dense.t0) if t > dense.t0 else (y0, dense.f0)
        return t, y

    def interior(self, state: RayState):
        arc = Arc("interior")
        self.path.arcs.append(arc)
        p = state.phase
        arc.add(p.t, p.x, p.tau, p.xi)
        self.record_symbol(p.x, p.tau, p.xi)
        h = None
        while True:
            if p.t >= self.t_max - max(1e-15, self.tol.dt_min):
                return None
            new, dense, shift, h = integrate_interior(RayState(p), self.metric, min(self.tol.dt_max, self.t_max - p.t),
                                                      self.tol, h)
            self.path.projection_shifts.append(shift)
            hit = detect_boundary_event(dense, self.domain, self.t_block, self.tol)
            if hit is not None:
                t_star, mode = hit
                t_star, y = self.polish(dense, t_star, mode, p.tau)
                for tt in np.linspace(p.t, t_star, 4)[1:-1]:
                    arc.add(tt, dense(tt)[:2], p.tau, dense(tt)[2:])
                yp, tau_p, _ = _project(y, p.tau, self.metric)
                phase = PhasePoint(t_star, yp[:2], tau_p, yp[2:])
                arc.add(phase.t, phase.x, phase.tau, phase.xi)
                self.record_symbol(phase.x, phase.tau, phase.xi)
                return self.boundary_event(phase, mode)
            for tt in np.linspace(p.t, new.phase.t, 4)[1:-1]:
                arc.add(tt, dense(tt)[:2], p.tau, dense(tt)[2:])
            p = new.phase
            arc.add(p.t, p.x, p.tau, p.xi)
            self.record_symbol(p.x, p.tau, p.xi)

    # ----- driver -----
    def start_from_boundary(self, b: BoundaryCovector, lift):
        cls = self._classify(b)
        if cls.region is Region.ELLIPTIC:
            raise RayError(f"no characteristic lift over an elliptic covector (r0 = {cls.r0:.3e})",
                           partial_path=self.path)
        chart = self.domain.chart(b.curve, b.s, self.metric)
        if cls.region is Region.HYPERBOLIC:
            if lift not in (1, -1):
                raise RayError("hyperbolic start needs a lift sign of +1 or -1")
            r0 = b.tau**2 - chart.h * b.xi_t**2
            phase = PhasePoint(b.t, chart.x, b.tau, join_covector(b.xi_t, lift * math.sqrt(r0), chart))
            xi_n = lift * math.sqrt(r0)
            self.record_symbol(phase.x, phase.tau, phase.xi)
            if xi_n * b.tau > 0:
                # outgoing lift: reflected immediately
                self.t_block = b.t + self.tol.dwell
                self.emit(RayEvent(EventKind.HYPERBOLIC_REFLECTION, b.t, phase.x, b.tau, phase.xi, b.curve, b.s,
                                   b.xi_t, xi_n, cls, flagged=self._near_glancing(cls)))
                self.region_hits(b.t, phase.x, b.tau, phase.xi, b.curve, b.s, b.xi_t, xi_n, cls)
                return RayState(PhasePoint(b.t, chart.x, b.tau, reflect_covector(phase.xi, chart)))
            self.t_block = b.t + self.tol.dwell
            self.region_hits(b.t, phase.x, b.tau, phase.xi, b.curve, b.s, b.xi_t, xi_n, cls)
            return RayState(phase)
        lift_pt = tangential_lift(b, self.domain, self.metric)
        if cls.kind is GlancingKind.STRICTLY_GLIDING:
            return self.enter_gliding(b, cls, lift_pt.x)
        self.t_block = b.t + self.tol.dwell
        self.emit(RayEvent(EventKind.DIFFRACTIVE_TOUCH, b.t, lift_pt.x, b.tau, lift_pt.xi, b.curve, b.s, b.xi_t,
                           0.0, cls, flagged=cls.kind is GlancingKind.DEGENERATE))
        self.region_hits(b.t, lift_pt.x, b.tau, lift_pt.xi, b.curve, b.s, b.xi_t, 0.0, cls)
        return RayState(lift_pt)

    def run(self, initial, lift=None) -> RayPath:
        if isinstance(initial, BoundaryCovector):
            init = initial.normalized()
            desc = {"type": "boundary", "curve": init.curve, "s": init.s, "tau": init.tau, "xi_t": init.xi_t,
                    "lift": lift}
        else:
            init = initial.normalized()
            desc = {"type": "interior", "x": init.x.tolist(), "tau": init.tau, "xi": init.xi.tolist()}
        if abs(init.tau) < 1e-6:
            raise TauDegenerate(f"|tau| = {abs(init.tau):.3e} cannot parametrize time")
        self.path = RayPath(desc)
        try:
            if isinstance(init, BoundaryCovector):
                state = self.start_from_boundary(init, lift)
            else:
                d = self.domain.signed_distance(init.x)
                if not (d >= -self.tol.boundary):
                    raise RayError("interior start lies outside the domain", partial_path=self.path)
                state = RayState(init)
            while state is not None:
                state = self.glide(state) if state.regime == "gliding" else self.interior(state)
            last = self.path.arcs[-1]
            t_end = last.t[-1]
            self.path.t_end = t_end
            self.path.stopped = "time"
            self.emit(RayEvent(EventKind.TIME_EXPIRED, t_end, last.x[-1], last.tau[-1], last.xi[-1]))
        except _Stop:
            self.path.t_end = self.path.events[-1].t
        except RayError as err:
            err.partial_path = self.path
            raise
        return self.path


def trace(initial, domain: Domain, metric: MetricField, t_max: float, watch: Sequence[BoundaryRegion] = (),
          lift=None, tol: RayTolerances = RayTolerances(),
          stop: Callable[[RayEvent, RayPath], bool] | None = None) -> RayPath:
    """Trace a generalized bicharacteristic for ``0 <= t - t0 <= t_max``.

    ``initial`` is a :class:`PhasePoint` (interior, characteristic) or a
    :class:`BoundaryCovector` together with ``lift``: ``+1`` / ``-1`` for the two
    hyperbolic fibres (collar-normal sign) or ``"glancing"``.
    """
    t0 = initial.t
    return _Tracer(domain, metric, t0 + t_max, watch, tol, stop).run(initial, lift)


def gliding_step(state: RayState, domain: Domain, metric: MetricField, t_max: float,
                 tol: RayTolerances = RayTolerances()):
    """Integrate a gliding state until it exits or ``t_max``; returns ``(state or None, events)``."""
    tr = _Tracer(domain, metric, t_max, (), tol, None)
    tr.path = RayPath({"type": "gliding"})
    nxt = tr.glide(state)
    return nxt, tr.path.events


def characteristic_phase(x, direction, metric: MetricField, t: float = 0.0) -> PhasePoint:
    """Normalized characteristic covector at ``x`` whose ray moves along ``direction``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(direction, dtype=float)
    a = metric.a(x)
    ainv_v = np.linalg.solve(a, v)
    v = v / math.sqrt(float(v @ ainv_v))
    xi = -np.linalg.solve(a, v)           # dx/dt = -A xi / tau with tau = 1
    return PhasePoint(t, x, 1.0, xi).normalized()
