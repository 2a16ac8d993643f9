"""Principal symbol, Hamiltonian field and the boundary classification E / H / G.

Symbol ``p(x; tau, xi) = tau^2 - xi^t A(x) xi``. At a boundary point the covector
splits into a tangential part ``xi_t = xi . T`` and a normal part ``xi_n = xi . n_vec``
(collar frame), and ``p = r(x; tau, xi_t) - xi_n^2`` with ``r = tau^2 - h xi_t^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import NotHyperbolic
from .geometry import Domain, MetricField, normal_curvature

GLANCING_TOL = 1e-7


@dataclass(frozen=True)
class PhasePoint:
    t: float
    x: np.ndarray
    tau: float
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))

    def normalized(self) -> "PhasePoint":
        nrm = math.sqrt(self.tau**2 + float(self.xi @ self.xi))
        return replace(self, tau=self.tau / nrm, xi=self.xi / nrm)

    def reversed(self) -> "PhasePoint":
        """Same point with the spatial covector negated: the time-reversed ray."""
        return replace(self, xi=-self.xi)


@dataclass(frozen=True)
class BoundaryCovector:
    curve: str
    s: float
    t: float
    tau: float
    xi_t: float

    def normalized(self) -> "BoundaryCovector":
        nrm = math.hypot(self.tau, self.xi_t)
        return replace(self, tau=self.tau / nrm, xi_t=self.xi_t / nrm)


class Region(str, Enum):
    ELLIPTIC = "Elliptic"
    HYPERBOLIC = "Hyperbolic"
    GLANCING = "Glancing"


class GlancingKind(str, Enum):
    DIFFRACTIVE = "Diffractive"
    STRICTLY_GLIDING = "StrictlyGliding"
    DEGENERATE = "Degenerate"


@dataclass(frozen=True)
class Classification:
    region: Region
    r0: float
    dn_r: float | None = None
    kind: GlancingKind | None = None

    @property
    def label(self) -> str:
        return f"Glancing({self.kind.value})" if self.region is Region.GLANCING else self.region.value

    def to_dict(self) -> dict:
        return {"class": self.label, "r0": self.r0, "dn_r": self.dn_r}


def principal_symbol(p: PhasePoint, metric: MetricField) -> float:
    a = metric.a(p.x)
    return float(p.tau**2 - p.xi @ a @ p.xi)


def hamiltonian_field(p: PhasePoint, metric: MetricField):
    """Components ``(dt, dx, dtau, dxi)`` of the Hamiltonian field of ``p``."""
    a = metric.a(p.x)
    da = metric.grad_a(p.x)
    dxi = np.einsum("i,kij,j->k", p.xi, da, p.xi)
    return 2.0 * p.tau, -2.0 * a @ p.xi, 0.0, dxi


def boundary_r0(b: BoundaryCovector, domain: Domain, metric: MetricField) -> float:
    ch = domain.chart(b.curve, b.s, metric)
    return b.tau**2 - ch.h * b.xi_t**2


def split_covector(xi, chart) -> tuple[float, float]:
    """Tangential and collar-normal components ``(xi . T, xi . n_vec)``."""
    xi = np.asarray(xi, dtype=float)
    return float(xi @ chart.t_vec), float(xi @ chart.n_vec)


def join_covector(xi_t: float, xi_n: float, chart) -> np.ndarray:
    return chart.dual_frame @ np.array([xi_t, xi_n])


def tangential_lift(b: BoundaryCovector, domain: Domain, metric: MetricField, xi_n: float = 0.0) -> PhasePoint:
    ch = domain.chart(b.curve, b.s, metric)
    return PhasePoint(b.t, ch.x, b.tau, join_covector(b.xi_t, xi_n, ch))


def _r_along_collar(b, domain, metric, xn):
    """``r = tau^2 - h(s, x_n) xi_t^2`` on the linear collar ``x(s) + x_n n_vec(s)``."""
    c = domain.curve(b.curve)
    L = c.length
    eps = 1e-5 * min(c.min_radius, 1.0) if math.isfinite(c.min_radius) else 1e-5

    def frame(s):
        return domain.chart(b.curve, np.mod(s, L), metric)

    ch = frame(b.s)
    chp, chm = frame(b.s + eps), frame(b.s - eps)
    dnu = (chp.n_vec - chm.n_vec) / (2 * eps)
    out = []
    for z in np.atleast_1d(xn):
        x = ch.x + z * ch.n_vec
        ginv = np.linalg.inv(metric.a(x))           # metric tensor g = A^{-1}
        e_s = ch.t_vec + z * dnu                    # d/ds of the collar map
        e_n = ch.n_vec
        gss, gsn, gnn = e_s @ ginv @ e_s, e_s @ ginv @ e_n, e_n @ ginv @ e_n
        h = gnn / (gss * gnn - gsn**2)
        out.append(b.tau**2 - h * b.xi_t**2)
    return np.array(out)


def dn_r(b: BoundaryCovector, domain: Domain, metric: MetricField, method: str = "fd") -> float:
    """Normal derivative ``d r / d x_n`` at ``x_n = 0``.

    ``method="fd"`` differentiates ``r`` along the collar with Richardson-extrapolated
    one-sided differences (step ``1e-4`` times the curvature radius); ``"analytic"``
    uses the glancing-ray formula ``2 h xi_t^2 m`` with ``m`` from
    :func:`normal_curvature`.
    """
    if method == "analytic":
        ch = domain.chart(b.curve, b.s, metric)
        m = normal_curvature(domain, b.curve, b.s, metric)
        return 2.0 * ch.h * b.xi_t**2 * float(m)
    c = domain.curve(b.curve)
    R = c.min_radius if math.isfinite(c.min_radius) else 1.0
    step = 1e-4 * R
    r = _r_along_collar(b, domain, metric, [0.0, step, 2 * step, 4 * step])
    # second-order one-sided differences at two steps, then one Richardson pass
    d1 = (-3 * r[0] + 4 * r[1] - r[2]) / (2 * step)
    d2 = (-3 * r[0] + 4 * r[2] - r[3]) / (4 * step)
    return float((4 * d1 - d2) / 3)


def classify(b: BoundaryCovector, domain: Domain, metric: MetricField, tol: float = GLANCING_TOL,
             method: str = "fd") -> Classification:
    """E / H / G by the sign of the normalized ``r0``; glancing points are split by ``dn_r``."""
    bn = b.normalized()
    r0 = boundary_r0(bn, domain, metric)
    if r0 > tol:
        return Classification(Region.HYPERBOLIC, r0)
    if r0 < -tol:
        return Classification(Region.ELLIPTIC, r0)
    d = dn_r(bn, domain, metric, method=method)
    if d > tol:
        kind = GlancingKind.DIFFRACTIVE
    elif d < -tol:
        kind = GlancingKind.STRICTLY_GLIDING
    else:
        kind = GlancingKind.DEGENERATE
    return Classification(Region.GLANCING, r0, d, kind)


def fiber_count(b: BoundaryCovector, domain: Domain, metric: MetricField, tol: float = GLANCING_TOL) -> int:
    """Number of characteristic lifts over ``b``, by solving ``p(xi) = 0`` for the normal part.

    Writes ``xi = xi_t T* + z grad(x_n)`` in Cartesian components and counts the
    real roots of the quadratic ``p = 0`` in ``z`` through its reduced discriminant.
    """
    bn = b.normalized()
    ch = domain.chart(bn.curve, bn.s, metric)
    a = metric.a(ch.x)
    base = ch.dual_frame[:, 0] * bn.xi_t
    g = ch.dual_frame[:, 1]
    qa = g @ a @ g
    qb = 2.0 * base @ a @ g
    qc = base @ a @ base - bn.tau**2
    disc = (qb * qb - 4 * qa * qc) / (4 * qa * qa)
    if disc > tol:
        return 2
    if disc < -tol:
        return 0
    return 1


def hyperbolic_lift(b: BoundaryCovector, sign: int, domain: Domain, metric: MetricField,
                    tol: float = GLANCING_TOL) -> PhasePoint:
    """Characteristic covector over ``b`` with collar-normal part ``sign * sqrt(r0)``.

    ``sign = +1`` points along the inward collar coordinate; for ``tau > 0`` that ray
    moves outward (its normal velocity is ``-xi_n / tau``).
    """
    cls = classify(b, domain, metric, tol)
    if cls.region is not Region.HYPERBOLIC:
        raise NotHyperbolic(f"covector at s={b.s:.6g} is {cls.label}, not hyperbolic", r0=cls.r0)
    r0 = boundary_r0(b, domain, metric)
    return tangential_lift(b, domain, metric, xi_n=float(np.sign(sign)) * math.sqrt(r0))


def reflect_hyperbolic(b: BoundaryCovector, xi_n_in: float, domain: Domain, metric: MetricField,
                       tol: float = GLANCING_TOL) -> PhasePoint:
    """Specular reflection: keep ``tau`` and ``xi_t``, negate the collar-normal part.

    ``xi_n_in`` must describe an outgoing ray, i.e. ``xi_n_in / tau > 0``.
    """
    cls = classify(b, domain, metric, tol)
    if cls.region is not Region.HYPERBOLIC:
        raise NotHyperbolic(f"grazing hit at s={b.s:.6g} ({cls.label}) must take the glancing branch",
                            r0=cls.r0)
    if xi_n_in * b.tau <= 0:
        raise NotHyperbolic("incoming normal component does not point out of the domain", xi_n=xi_n_in)
    return tangential_lift(b, domain, metric, xi_n=-xi_n_in)


def boundary_covector_of(p: PhasePoint, domain: Domain, metric: MetricField, curve: str, s: float):
    """Split an interior covector sitting on the boundary into ``(BoundaryCovector, xi_n)``."""
    ch = domain.chart(curve, s, metric)
    xi_t, xi_n = split_covector(p.xi, ch)
    return BoundaryCovector(curve, ch.s, p.t, p.tau, xi_t), xi_n
