"""Planar domains, metric fields, boundary charts and the boundary concavity check.

Conventions used throughout the package:

* every boundary curve is closed and parametrized by Euclidean arc length ``s``;
* ``normal(s)`` is the Euclidean unit normal pointing *into* the domain;
* ``kappa(s)`` is the signed curvature seen from the domain, defined by
  ``Hess(d_E) = kappa * T T^t`` at the boundary, where ``d_E`` is the signed
  distance (positive inside).  ``kappa > 0`` means the boundary bulges into the
  domain (concave side, e.g. the inner circle of an annulus).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .errors import AmbiguousProjection, GeometryError, NonSmooth, OutsideCollar

TWO_PI = 2.0 * math.pi


def _rot90(v):
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


# --------------------------------------------------------------------------
# metric fields
# --------------------------------------------------------------------------


class MetricField:
    """Symmetric positive definite coefficient field ``A(x)``.

    Subclasses implement :meth:`a` and :meth:`grad_a` for arrays of points of
    shape ``(..., 2)``; ``grad_a(x)[..., k, i, j]`` is ``d a_ij / d x_k``.
    """

    name = "metric"
    lam_min = 1.0
    lam_max = 1.0

    def a(self, x):
        raise NotImplementedError

    def grad_a(self, x):
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    @property
    def is_identity(self) -> bool:
        return False

    def describe(self) -> dict:
        return {"preset": self.name, **self.params()}


class IdentityMetric(MetricField):
    name = "identity"

    def a(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()

    def grad_a(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (2, 2, 2))

    @property
    def is_identity(self) -> bool:
        return True


class ConstantMetric(MetricField):
    name = "constant"

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=float)
        if m.shape != (2, 2) or not np.allclose(m, m.T):
            raise GeometryError("constant metric must be a symmetric 2x2 matrix")
        w = np.linalg.eigvalsh(m)
        if w[0] <= 0:
            raise GeometryError("constant metric must be positive definite")
        self.matrix = m
        self.lam_min, self.lam_max = float(w[0]), float(w[1])

    def a(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.matrix, x.shape[:-1] + (2, 2)).copy()

    def grad_a(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (2, 2, 2))

    def params(self):
        return {"matrix": self.matrix.tolist()}


class LinearX1Metric(MetricField):
    """``A(x) = diag((1 + alpha x1)**power, 1)``; valid while ``1 + alpha x1 > 0``."""

    name = "linear_x1"

    def __init__(self, alpha: float = 1.0, power: int = 1, x1_range=(-0.5, 0.5)):
        self.alpha = float(alpha)
        self.power = int(power)
        lo, hi = x1_range
        vals = [(1 + self.alpha * lo) ** self.power, (1 + self.alpha * hi) ** self.power]
        if min(1 + self.alpha * lo, 1 + self.alpha * hi) <= 0:
            raise GeometryError("linear_x1 metric degenerates on the requested range")
        self.x1_range = (float(lo), float(hi))
        self.lam_min = min(min(vals), 1.0)
        self.lam_max = max(max(vals), 1.0)

    def a(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = (1 + self.alpha * x[..., 0]) ** self.power
        out[..., 1, 1] = 1.0
        return out

    def grad_a(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        p = self.power
        out[..., 0, 0, 0] = p * self.alpha * (1 + self.alpha * x[..., 0]) ** (p - 1)
        return out

    def params(self):
        return {"alpha": self.alpha, "power": self.power, "x1_range": list(self.x1_range)}


class ConformalBumpMetric(MetricField):
    """``A(x) = c(x)^2 I`` with ``c = 1 + amp * exp(-|x - center|^2 / width^2)``."""

    name = "conformal_bump"

    def __init__(self, amp: float = 0.2, center=(0.0, 1.5), width: float = 0.5):
        if amp <= -1:
            raise GeometryError("conformal_bump amplitude must exceed -1")
        self.amp = float(amp)
        self.center = np.asarray(center, dtype=float)
        self.width = float(width)
        cmin, cmax = min(1.0, 1.0 + self.amp), max(1.0, 1.0 + self.amp)
        self.lam_min, self.lam_max = cmin**2, cmax**2

    def _c(self, x):
        d = x - self.center
        e = np.exp(-np.sum(d * d, axis=-1) / self.width**2)
        c = 1.0 + self.amp * e
        dc = (-2.0 * self.amp * e / self.width**2)[..., None] * d
        return c, dc

    def a(self, x):
        x = np.asarray(x, dtype=float)
        c, _ = self._c(x)
        return (c**2)[..., None, None] * np.eye(2)

    def grad_a(self, x):
        x = np.asarray(x, dtype=float)
        c, dc = self._c(x)
        g = 2.0 * c[..., None] * dc
        return g[..., :, None, None] * np.eye(2)

    def params(self):
        return {"amp": self.amp, "center": self.center.tolist(), "width": self.width}


METRIC_PRESETS = {
    "identity": IdentityMetric,
    "constant": ConstantMetric,
    "linear_x1": LinearX1Metric,
    "conformal_bump": ConformalBumpMetric,
}


def metric_from_preset(name: str, **params) -> MetricField:
    try:
        cls = METRIC_PRESETS[name]
    except KeyError:
        raise GeometryError(f"unknown metric preset {name!r}") from None
    return cls(**params)


# --------------------------------------------------------------------------
# curves
# --------------------------------------------------------------------------


class Curve:
    """Closed arc-length parametrized curve with the domain on a declared side.

    ``side = +1`` puts the domain on the left of increasing ``s``.
    """

    name: str
    length: float
    side: int
    junctions: tuple = ()

    def point(self, s):
        raise NotImplementedError

    def tangent(self, s):
        raise NotImplementedError

    def turning(self, s):
        """Signed turning rate d(heading)/ds (positive for left turns)."""
        raise NotImplementedError

    def project(self, x):
        """Nearest boundary point: returns ``(s, signed distance)`` for points ``(N, 2)``."""
        raise NotImplementedError

    def normal(self, s):
        return self.side * _rot90(self.tangent(s))

    def kappa(self, s):
        return -self.side * np.asarray(self.turning(s), dtype=float)

    def wrap(self, s):
        return np.mod(s, self.length)

    @property
    def min_radius(self) -> float:
        raise NotImplementedError

    def polyline(self, n: int = 512):
        s = np.linspace(0.0, self.length, n, endpoint=False)
        return self.point(s)

    def describe(self) -> dict:
        return {"type": type(self).__name__, "name": self.name, "length": self.length}


class Circle(Curve):
    def __init__(self, center=(0.0, 0.0), radius: float = 1.0, domain_inside: bool = True, name: str = "circle"):
        if radius <= 0:
            raise GeometryError("circle radius must be positive")
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.domain_inside = bool(domain_inside)
        self.side = 1 if domain_inside else -1
        self.name = name
        self.length = TWO_PI * self.radius

    def _theta(self, s):
        return np.asarray(s, dtype=float) / self.radius

    def point(self, s):
        th = self._theta(s)
        return self.center + self.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def tangent(self, s):
        th = self._theta(s)
        return np.stack([-np.sin(th), np.cos(th)], axis=-1)

    def turning(self, s):
        return np.full(np.shape(s), 1.0 / self.radius)

    def project(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v = x - self.center
        rho = np.hypot(v[:, 0], v[:, 1])
        th = np.mod(np.arctan2(v[:, 1], v[:, 0]), TWO_PI)
        d = (self.radius - rho) if self.domain_inside else (rho - self.radius)
        return th * self.radius, d

    @property
    def min_radius(self):
        return self.radius

    def describe(self):
        return {**super().describe(), "center": self.center.tolist(), "radius": self.radius,
                "domain_inside": self.domain_inside}


@dataclass(frozen=True)
class _Segment:
    p0: np.ndarray
    heading: float
    length: float

    def point(self, sig):
        d = np.array([math.cos(self.heading), math.sin(self.heading)])
        return self.p0 + np.asarray(sig)[..., None] * d

    def tangent(self, sig):
        d = np.array([math.cos(self.heading), math.sin(self.heading)])
        return np.broadcast_to(d, np.shape(sig) + (2,)).copy()

    def turning(self, sig):
        return np.zeros(np.shape(sig))

    def nearest(self, x):
        d = np.array([math.cos(self.heading), math.sin(self.heading)])
        sig = np.clip((x - self.p0) @ d, 0.0, self.length)
        return sig, np.linalg.norm(x - self.point(sig), axis=-1)


@dataclass(frozen=True)
class _Arc:
    center: np.ndarray
    radius: float
    theta0: float
    turn: float  # signed turning angle; > 0 is a left (counter-clockwise) turn

    @property
    def length(self):
        return abs(self.turn) * self.radius

    @property
    def sgn(self):
        return 1.0 if self.turn > 0 else -1.0

    def _theta(self, sig):
        return self.theta0 + self.sgn * np.asarray(sig, dtype=float) / self.radius

    def point(self, sig):
        th = self._theta(sig)
        return self.center + self.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def tangent(self, sig):
        th = self._theta(sig)
        return self.sgn * np.stack([-np.sin(th), np.cos(th)], axis=-1)

    def turning(self, sig):
        return np.full(np.shape(sig), self.sgn / self.radius)

    def nearest(self, x):
        v = x - self.center
        ang = np.arctan2(v[:, 1], v[:, 0])
        rel = self.sgn * (ang - self.theta0)
        rel = np.mod(rel, TWO_PI)
        span = abs(self.turn)
        # outside the swept angle: snap to the closer end (measured around the circle)
        beyond = rel > span
        to_end = rel - span
        to_start = TWO_PI - rel
        rel = np.where(beyond, np.where(to_end < to_start, span, 0.0), rel)
        sig = rel * self.radius
        return sig, np.linalg.norm(x - self.point(sig), axis=-1)


class PiecewiseCurve(Curve):
    """Closed G1 curve assembled from straight pieces and circular arcs ("turtle" path).

    Curvature is piecewise constant; the joins are listed in ``junctions``.
    The domain lies on the left of the path.
    """

    def __init__(self, start, heading: float, pieces: Sequence[tuple], name: str = "piecewise", close_tol=1e-9):
        self.name = name
        self.side = 1
        self.pieces = []
        p = np.asarray(start, dtype=float)
        h = float(heading)
        for piece in pieces:
            kind = piece[0]
            if kind == "line":
                seg = _Segment(p.copy(), h, float(piece[1]))
                self.pieces.append(seg)
                p = seg.point(seg.length)
            elif kind == "arc":
                radius, turn = float(piece[1]), float(piece[2])
                sgn = 1.0 if turn > 0 else -1.0
                normal_left = np.array([-math.sin(h), math.cos(h)])
                center = p + sgn * radius * normal_left
                v = p - center
                arc = _Arc(center, radius, math.atan2(v[1], v[0]), turn)
                self.pieces.append(arc)
                p = arc.point(arc.length)
                h += turn
            else:
                raise GeometryError(f"unknown piece kind {kind!r}")
        if np.linalg.norm(p - np.asarray(start, dtype=float)) > close_tol:
            raise GeometryError(f"piecewise curve {name!r} does not close (gap {np.linalg.norm(p - start):.3e})")
        if abs(math.remainder(h - heading, TWO_PI)) > 1e-9:
            raise GeometryError(f"piecewise curve {name!r} has a corner at the closing point")
        self.offsets = np.concatenate([[0.0], np.cumsum([pc.length for pc in self.pieces])])
        self.length = float(self.offsets[-1])
        self.junctions = tuple(float(o) for o in self.offsets[:-1]
                               if True)
        self._spec = [tuple(pc) for pc in pieces]
        self._start = np.asarray(start, dtype=float)
        self._heading = float(heading)

    def _locate(self, s):
        s = np.mod(np.asarray(s, dtype=float), self.length)
        idx = np.clip(np.searchsorted(self.offsets, s, side="right") - 1, 0, len(self.pieces) - 1)
        return s, idx

    def _eval(self, s, attr, width):
        s, idx = self._locate(s)
        flat_s, flat_i = np.atleast_1d(s), np.atleast_1d(idx)
        out = np.zeros(flat_s.shape + ((width,) if width else ()))
        for k, pc in enumerate(self.pieces):
            m = flat_i == k
            if np.any(m):
                out[m] = getattr(pc, attr)(flat_s[m] - self.offsets[k])
        return out.reshape(np.shape(s) + ((width,) if width else ()))

    def point(self, s):
        return self._eval(s, "point", 2)

    def tangent(self, s):
        return self._eval(s, "tangent", 2)

    def turning(self, s):
        return self._eval(s, "turning", 0)

    def project(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        best_d = np.full(len(x), np.inf)
        best_s = np.zeros(len(x))
        for k, pc in enumerate(self.pieces):
            sig, dist = pc.nearest(x)
            better = dist < best_d
            best_d = np.where(better, dist, best_d)
            best_s = np.where(better, sig + self.offsets[k], best_s)
        best_s = np.mod(best_s, self.length)
        sign = np.sign(np.einsum("ij,ij->i", x - self.point(best_s), self.normal(best_s)))
        sign = np.where(sign == 0, 1.0, sign)
        return best_s, sign * best_d

    @property
    def min_radius(self):
        radii = [pc.radius for pc in self.pieces if isinstance(pc, _Arc)]
        return min(radii) if radii else math.inf

    def describe(self):
        return {**super().describe(), "start": self._start.tolist(), "heading": self._heading,
                "pieces": [list(p) for p in self._spec]}


class ParametricCurve(Curve):
    """Smooth closed curve given by ``X(u)`` on ``[0, period)`` with analytic derivatives.

    Arc length is tabulated once (Gauss-Legendre panels) and inverted with Hermite
    splines, giving ``u(s)`` to roughly 1e-12 for smooth curves.
    """

    def __init__(self, name: str, period: float, side: int = 1, n_table: int = 4096):
        self.name = name
        self.period = float(period)
        self.side = int(side)
        u = np.linspace(0.0, self.period, n_table + 1)
        gx, gw = np.polynomial.legendre.leggauss(8)
        du = u[1] - u[0]
        nodes = u[:-1, None] + 0.5 * du * (gx[None, :] + 1.0)
        speed = np.linalg.norm(self.dX(nodes.ravel()), axis=-1).reshape(nodes.shape)
        seg = 0.5 * du * speed @ gw
        s = np.concatenate([[0.0], np.cumsum(seg)])
        sp = np.linalg.norm(self.dX(u), axis=-1)
        self.length = float(s[-1])
        self._s_of_u = CubicHermiteSpline(u, s, sp)
        self._u_of_s = CubicHermiteSpline(s, u, 1.0 / sp)
        self._u_table = u[:-1]
        self._x_table = self.X(u[:-1])

    # subclasses provide X, dX, ddX (vectorized in u)
    def X(self, u):
        raise NotImplementedError

    def dX(self, u):
        raise NotImplementedError

    def ddX(self, u):
        raise NotImplementedError

    def u_of_s(self, s):
        return self._u_of_s(np.mod(np.asarray(s, dtype=float), self.length))

    def point(self, s):
        return self.X(self.u_of_s(s))

    def tangent(self, s):
        d = self.dX(self.u_of_s(s))
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def turning(self, s):
        u = self.u_of_s(s)
        d1, d2 = self.dX(u), self.ddX(u)
        cross = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
        return cross / np.linalg.norm(d1, axis=-1) ** 3

    def project(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d2 = np.sum((x[:, None, :] - self._x_table[None, :, :]) ** 2, axis=-1)
        u = self._u_table[np.argmin(d2, axis=1)]
        for _ in range(8):
            r = self.X(u) - x
            d1, dd = self.dX(u), self.ddX(u)
            f = np.einsum("ij,ij->i", r, d1)
            fp = np.einsum("ij,ij->i", d1, d1) + np.einsum("ij,ij->i", r, dd)
            u = u - f / np.where(np.abs(fp) > 1e-300, fp, 1e-300)
        u = np.mod(u, self.period)
        s = np.mod(self._s_of_u(u), self.length)
        p = self.X(u)
        dist = np.linalg.norm(x - p, axis=-1)
        sign = np.sign(np.einsum("ij,ij->i", x - p, self.normal(s)))
        sign = np.where(sign == 0, 1.0, sign)
        return s, sign * dist

    @property
    def min_radius(self):
        s = np.linspace(0, self.length, 2048, endpoint=False)
        k = np.max(np.abs(self.turning(s)))
        return 1.0 / k if k > 0 else math.inf


class PolarCurve(ParametricCurve):
    """``X(u) = rho(u) (cos u, sin u)`` with ``rho(u) = r0 * (1 + eps * cos(m u))``."""

    def __init__(self, r0=1.0, eps=0.3, m=2, name="peanut", side=1):
        self.r0, self.eps, self.m = float(r0), float(eps), int(m)
        super().__init__(name, TWO_PI, side)

    def _rho(self, u):
        u = np.asarray(u, dtype=float)
        c, s = np.cos(self.m * u), np.sin(self.m * u)
        r = self.r0 * (1 + self.eps * c)
        r1 = -self.r0 * self.eps * self.m * s
        r2 = -self.r0 * self.eps * self.m**2 * c
        return r, r1, r2

    def X(self, u):
        r, _, _ = self._rho(u)
        return np.stack([r * np.cos(u), r * np.sin(u)], axis=-1)

    def dX(self, u):
        r, r1, _ = self._rho(u)
        c, s = np.cos(u), np.sin(u)
        return np.stack([r1 * c - r * s, r1 * s + r * c], axis=-1)

    def ddX(self, u):
        r, r1, r2 = self._rho(u)
        c, s = np.cos(u), np.sin(u)
        return np.stack([r2 * c - 2 * r1 * s - r * c, r2 * s + 2 * r1 * c - r * s], axis=-1)

    def describe(self):
        return {**super().describe(), "r0": self.r0, "eps": self.eps, "m": self.m}


class SplineCurve(ParametricCurve):
    """Periodic cubic spline through sampled points (closed implicitly)."""

    def __init__(self, points, name="spline", side=1):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
            raise GeometryError("spline curve needs at least four (x, y) points")
        if np.allclose(pts[0], pts[-1]):
            pts = pts[:-1]
        closed = np.vstack([pts, pts[:1]])
        u = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(closed, axis=0), axis=1))])
        self._spline = CubicSpline(u, closed, bc_type="periodic")
        self._d1 = self._spline.derivative(1)
        self._d2 = self._spline.derivative(2)
        self.points = pts
        super().__init__(name, float(u[-1]), side)

    def X(self, u):
        return self._spline(np.mod(u, self.period))

    def dX(self, u):
        return self._d1(np.mod(u, self.period))

    def ddX(self, u):
        return self._d2(np.mod(u, self.period))

    def describe(self):
        return {**super().describe(), "n_points": len(self.points)}


def read_polyline(path) -> np.ndarray:
    """Read a polyline file: one ``x y`` pair per line, ``#`` comments allowed."""
    pts = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                a, b = line.split()[:2]
                pts.append((float(a), float(b)))
    return np.asarray(pts)


# --------------------------------------------------------------------------
# boundary regions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryRegion:
    """Union of arc-length intervals on one curve. ``intervals=None`` means the whole curve.

    Intervals are ``(a, b)`` with ``a < b`` and may wrap past the curve length.
    """

    curve: str
    label: str
    intervals: tuple | None = None

    def is_full(self, length: float) -> bool:
        if self.intervals is None:
            return True
        return any(b - a >= length - 1e-12 for a, b in self.intervals)

    def contains(self, s, length: float, closed: bool = True, tol: float = 1e-12):
        s = np.asarray(s, dtype=float)
        if self.is_full(length):
            return np.ones(s.shape, dtype=bool)
        out = np.zeros(s.shape, dtype=bool)
        for a, b in self.intervals:
            rel = np.mod(s - a, length)
            w = b - a
            if closed:
                out |= (rel <= w + tol) | (rel >= length - tol)
            else:
                out |= (rel > tol) & (rel < w - tol)
        return out

    def dilate(self, fraction: float, length: float, label: str | None = None) -> "BoundaryRegion":
        if self.is_full(length):
            return BoundaryRegion(self.curve, label or self.label, None)
        new = []
        for a, b in self.intervals:
            pad = fraction * (b - a)
            if (b - a) + 2 * pad >= length:
                return BoundaryRegion(self.curve, label or self.label, None)
            new.append((a - pad, b + pad))
        return BoundaryRegion(self.curve, label or self.label, tuple(new))

    def arc_length(self, length: float) -> float:
        if self.is_full(length):
            return length
        return float(sum(b - a for a, b in self.intervals))

    def sample(self, n: int, length: float) -> np.ndarray:
        """``n`` points spread uniformly over the region (cell centres)."""
        if self.is_full(length):
            return (np.arange(n) + 0.5) * length / n
        total = self.arc_length(length)
        pos = (np.arange(n) + 0.5) * total / n
        out = []
        acc = 0.0
        for a, b in self.intervals:
            w = b - a
            m = (pos >= acc) & (pos < acc + w)
            out.append(a + pos[m] - acc)
            acc += w
        return np.mod(np.concatenate(out), length)

    def describe(self) -> dict:
        return {"curve": self.curve, "label": self.label,
                "intervals": None if self.intervals is None else [list(i) for i in self.intervals]}


def check_region_nesting(inner: BoundaryRegion, outer: BoundaryRegion, far: BoundaryRegion, length_of) -> list[str]:
    """Interval checks for ``closure(inner) ⊂ interior(outer)`` and ``closure(outer) ∩ closure(far) = ∅``.

    ``length_of(curve_name)`` returns the curve length. Returns a list of problems (empty if fine).
    """
    problems = []
    if inner.curve != outer.curve:
        problems.append("source region and its neighbourhood lie on different curves")
    else:
        L = length_of(inner.curve)
        if not outer.is_full(L):
            if inner.is_full(L):
                problems.append("neighbourhood must contain the whole curve")
            else:
                for a, b in inner.intervals:
                    ok = False
                    for c, d in outer.intervals:
                        ra = np.mod(a - c, L)
                        if ra > 0 and ra + (b - a) < d - c:
                            ok = True
                    if not ok:
                        problems.append(f"closure of interval ({a}, {b}) is not interior to the neighbourhood")
    if far.curve == outer.curve:
        L = length_of(far.curve)
        if outer.is_full(L) or far.is_full(L):
            problems.append("measurement region meets the closed source neighbourhood")
        else:
            for a, b in far.intervals:
                for c, d in outer.intervals:
                    # closed intervals on a circle intersect iff either start lies in the other
                    if np.mod(a - c, L) <= d - c or np.mod(c - a, L) <= b - a:
                        problems.append(f"measurement interval ({a}, {b}) meets neighbourhood ({c}, {d})")
    return problems


# --------------------------------------------------------------------------
# domain
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryChart:
    curve: str
    s: float
    x: np.ndarray
    t_vec: np.ndarray      # Euclidean unit tangent
    normal: np.ndarray     # Euclidean unit inward normal
    n_vec: np.ndarray      # inward collar direction A n / sqrt(n^t A n) (metric-unit)
    conormal_scale: float  # sqrt(n^t A n)
    h: float               # tangential cometric coefficient 1 / (T^t A^{-1} T)
    kappa: float

    @property
    def frame(self) -> np.ndarray:
        """Columns ``[T, n_vec]``: the collar coordinate frame at ``x_n = 0``."""
        return np.column_stack([self.t_vec, self.n_vec])

    @property
    def dual_frame(self) -> np.ndarray:
        """Columns are the covectors dual to ``[T, n_vec]``: ``xi = dual_frame @ (xi_t, xi_n)``."""
        return np.linalg.inv(self.frame).T

    @property
    def grad_xn(self) -> np.ndarray:
        return self.normal / self.conormal_scale


@dataclass(frozen=True)
class Domain:
    """Intersection of the domain sides of its boundary curves."""

    curves: tuple
    name: str = "domain"
    bbox: tuple = (-1.0, 1.0, -1.0, 1.0)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        names = [c.name for c in self.curves]
        if len(set(names)) != len(names):
            raise GeometryError("curve names must be unique")

    def curve(self, key) -> Curve:
        if isinstance(key, int):
            return self.curves[key]
        for c in self.curves:
            if c.name == key:
                return c
        raise GeometryError(f"domain {self.name!r} has no curve {key!r}")

    def curve_index(self, name: str) -> int:
        return [c.name for c in self.curves].index(name)

    def collar_radius(self, key) -> float:
        c = self.curve(key)
        r = 0.2 * c.min_radius
        if not math.isfinite(r):
            r = 0.2 * max(self.bbox[1] - self.bbox[0], self.bbox[3] - self.bbox[2])
        return r

    def _all_projections(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ss, ds = [], []
        for c in self.curves:
            s, d = c.project(x)
            ss.append(s)
            ds.append(d)
        return np.array(ss), np.array(ds)

    def signed_distance(self, x):
        """Signed Euclidean distance to the boundary (positive inside).

        Points outside the domain and farther than every curve's collar radius are
        flagged by returning ``nan``.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        _, ds = self._all_projections(x)
        d = ds.min(axis=0)
        radii = np.array([self.collar_radius(i) for i in range(len(self.curves))])
        far = (d < 0) & np.all(np.abs(ds) > radii[:, None], axis=0)
        d = np.where(far, np.nan, d)
        return float(d[0]) if single else d

    def distance_and_gradient(self, x):
        """Signed distance with its gradient (the inward normal at the nearest point)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ss, ds = self._all_projections(x)
        k = np.argmin(ds, axis=0)
        d = ds[k, np.arange(len(x))]
        grad = np.zeros_like(x)
        for i, c in enumerate(self.curves):
            m = k == i
            if np.any(m):
                grad[m] = c.normal(ss[i, m])
        return d, grad, k, ss[k, np.arange(len(x))]

    def inside(self, x):
        d = self.distance_and_gradient(x)[0]
        return d > 0

    def winding_inside(self, x, n: int = 2048):
        """Independent inside test: sum of side-weighted winding numbers of the curves."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        total = np.zeros(len(x))
        for c in self.curves:
            p = c.polyline(n)
            a = p[None, :, :] - x[:, None, :]
            b = np.roll(p, -1, axis=0)[None, :, :] - x[:, None, :]
            ang = np.arctan2(a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0], np.sum(a * b, axis=-1))
            total += c.side * ang.sum(axis=1) / TWO_PI
        return np.rint(total) == 1

    def boundary_project(self, x, tol: float = 1e-9, check_collar: bool = True):
        """Nearest boundary point of ``x``: ``(curve name, s, distance)``."""
        x = np.asarray(x, dtype=float)
        ss, ds = self._all_projections(x)
        ss, ds = ss[:, 0], np.abs(ds[:, 0])
        order = np.argsort(ds)
        if len(order) > 1 and abs(ds[order[1]] - ds[order[0]]) <= tol:
            raise AmbiguousProjection(
                f"point {x.tolist()} is equidistant from curves "
                f"{self.curves[order[0]].name!r} and {self.curves[order[1]].name!r}")
        k = int(order[0])
        if check_collar and ds[k] > self.collar_radius(k) + 1e-12:
            raise OutsideCollar(f"point {x.tolist()} lies outside the collar of {self.curves[k].name!r}")
        return self.curves[k].name, float(ss[k]), float(ds[k])

    def chart(self, curve, s: float, metric: MetricField) -> BoundaryChart:
        c = self.curve(curve)
        s = float(np.mod(s, c.length))
        x = c.point(s)
        t = c.tangent(s)
        n = c.normal(s)
        a = metric.a(x)
        phi = math.sqrt(float(n @ a @ n))
        nu = (a @ n) / phi
        h = 1.0 / float(t @ np.linalg.solve(a, t))
        return BoundaryChart(c.name, s, x, t, n, nu, phi, h, float(c.kappa(s)))

    def collar_map(self, curve, s, xn, metric: MetricField):
        ch = self.chart(curve, s, metric)
        return ch.x + xn * ch.n_vec

    def collar_coordinates(self, x, metric: MetricField, curve=None, iters: int = 30):
        """Invert the collar map ``(s, x_n) -> x(s) + x_n n_vec(s)`` by Newton iteration."""
        x = np.asarray(x, dtype=float)
        if curve is None:
            curve, s, _ = self.boundary_project(x, check_collar=False)
        else:
            s, _ = self.curve(curve).project(x)
            s = float(s[0])
        c = self.curve(curve)
        xn = float((x - c.point(s)) @ c.normal(s))
        eps = 1e-6 * max(c.min_radius if math.isfinite(c.min_radius) else 1.0, 1e-3)
        for _ in range(iters):
            f = self.collar_map(curve, s, xn, metric) - x
            if np.linalg.norm(f) < 1e-14:
                break
            ds_col = (self.collar_map(curve, s + eps, xn, metric) - self.collar_map(curve, s - eps, xn, metric)) / (2 * eps)
            dn_col = self.chart(curve, s, metric).n_vec
            step = np.linalg.solve(np.column_stack([ds_col, dn_col]), f)
            s -= step[0]
            xn -= step[1]
        return c.name, float(np.mod(s, c.length)), xn

    def describe(self) -> dict:
        return {"name": self.name, "bbox": list(self.bbox), "curves": [c.describe() for c in self.curves],
                **({"meta": self.meta} if self.meta else {})}


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------


def annulus(r1: float = 1.0, r2: float = 2.0) -> Domain:
    if not 0 < r1 < r2:
        raise GeometryError("annulus needs 0 < r1 < r2")
    return Domain((Circle((0, 0), r1, domain_inside=False, name="inner"),
                   Circle((0, 0), r2, domain_inside=True, name="outer")),
                  name="annulus", bbox=(-r2, r2, -r2, r2), meta={"r1": r1, "r2": r2})


def disc(r: float = 1.0) -> Domain:
    return Domain((Circle((0, 0), r, domain_inside=True, name="circle"),), name="disc",
                  bbox=(-r, r, -r, r), meta={"r": r})


def pocket(width: float = 4.0, height: float = 2.0, corner_radius: float = 0.3,
           pocket_radius: float = 0.5, fillet_radius: float = 0.3, pocket_angle: float = math.pi / 3,
           with_pocket: bool = True) -> Domain:
    """Rounded rectangle ``[0, width] x [0, height]`` whose bottom edge carries a smooth
    inward bump (a concave arc flanked by two convex fillets)."""
    rc = corner_radius
    if with_pocket:
        b = pocket_angle
        bump_dx = 2 * math.sin(b) * (fillet_radius + pocket_radius)
        flat = (width - 2 * rc - bump_dx) / 2
        if flat <= 0:
            raise GeometryError("pocket does not fit on the bottom edge")
        bottom = [("line", flat), ("arc", fillet_radius, b), ("arc", pocket_radius, -2 * b),
                  ("arc", fillet_radius, b), ("line", flat)]
    else:
        bottom = [("line", width - 2 * rc)]
    pieces = bottom + [("arc", rc, math.pi / 2), ("line", height - 2 * rc), ("arc", rc, math.pi / 2),
                       ("line", width - 2 * rc), ("arc", rc, math.pi / 2), ("line", height - 2 * rc),
                       ("arc", rc, math.pi / 2)]
    curve = PiecewiseCurve((rc, 0.0), 0.0, pieces, name="boundary")
    meta = {"width": width, "height": height, "corner_radius": rc, "with_pocket": with_pocket}
    if with_pocket:
        meta.update(pocket_radius=pocket_radius, fillet_radius=fillet_radius, pocket_angle=pocket_angle,
                    flat=flat)
    return Domain((curve,), name="pocket" if with_pocket else "rounded_rectangle",
                  bbox=(0.0, width, 0.0, height), meta=meta)


def pocket_arc_region(domain: Domain, label: str = "O", shrink: float = 0.1) -> BoundaryRegion:
    """The concave arc of the pocket preset, shrunk by ``shrink`` of its length at each end."""
    c = domain.curve("boundary")
    a, b = c.offsets[2], c.offsets[3]
    pad = shrink * (b - a)
    return BoundaryRegion("boundary", label, ((a + pad, b - pad),))


def peanut(r0: float = 1.0, eps: float = 0.3) -> Domain:
    c = PolarCurve(r0, eps, 2, name="boundary")
    R = r0 * (1 + abs(eps))
    return Domain((c,), name="peanut", bbox=(-R, R, -R, R), meta={"r0": r0, "eps": eps})


def from_polyline(points, name: str = "polyline") -> Domain:
    c = SplineCurve(points, name="boundary")
    pts = c.polyline(1024)
    # domain on the left requires counter-clockwise orientation
    area = 0.5 * np.sum(pts[:, 0] * np.roll(pts[:, 1], -1) - np.roll(pts[:, 0], -1) * pts[:, 1])
    if area < 0:
        c = SplineCurve(np.asarray(points)[::-1], name="boundary")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return Domain((c,), name=name, bbox=(lo[0], hi[0], lo[1], hi[1]))


DOMAIN_PRESETS = {"annulus": annulus, "disc": disc, "pocket": pocket, "peanut": peanut,
                  "rounded_rectangle": lambda **kw: pocket(with_pocket=False, **kw)}


def domain_from_preset(name: str, **params) -> Domain:
    try:
        fn = DOMAIN_PRESETS[name]
    except KeyError:
        raise GeometryError(f"unknown domain preset {name!r}") from None
    return fn(**params)


# --------------------------------------------------------------------------
# concavity
# --------------------------------------------------------------------------


def normal_curvature(domain: Domain, curve, s, metric: MetricField):
    """Second derivative of the geodesic normal coordinate along the unit-speed
    geodesic tangent to the boundary at ``x(s)`` (positive on strictly concave parts).

    Evaluated from the Hamiltonian field at the glancing lift ``(tau = 1, xi_n = 0)``:
    with ``d_E`` the signed distance, ``H^2 d_E = kappa (v.T)^2 - 2 sum_k v_k n^t dA_k xi
    - 2 n^t A xidot`` and ``d^2 x_n/dt^2 = H^2 d_E / (4 sqrt(n^t A n))``.
    """
    c = domain.curve(curve)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    x = c.point(s)
    t = c.tangent(s)
    n = c.normal(s)
    kap = c.kappa(s)
    a = metric.a(x)
    da = metric.grad_a(x)
    an = np.einsum("...ij,...j->...i", a, n)
    phi = np.sqrt(np.einsum("...i,...i->...", n, an))
    nu = an / phi[..., None]
    ainv_t = np.linalg.solve(a, t[..., None])[..., 0]
    h = 1.0 / np.einsum("...i,...i->...", t, ainv_t)
    frame = np.stack([t, nu], axis=-1)
    dual = np.swapaxes(np.linalg.inv(frame), -1, -2)
    xi = np.einsum("...ij,...j->...i", dual, np.stack([1.0 / np.sqrt(h), np.zeros_like(h)], axis=-1))
    v = -2.0 * np.einsum("...ij,...j->...i", a, xi)
    xidot = np.einsum("...i,...kij,...j->...k", xi, da, xi)
    term1 = kap * np.einsum("...i,...i->...", v, t) ** 2
    term2 = 2.0 * np.einsum("...k,...i,...kij,...j->...", v, n, da, xi)
    term3 = 2.0 * np.einsum("...i,...ij,...j->...", n, a, xidot)
    out = (term1 - term2 - term3) / (4.0 * phi)
    return out if out.size > 1 else float(out[0])


@dataclass
class ConcavityReport:
    region: dict
    samples: np.ndarray
    margins: np.ndarray
    threshold: float
    verdict: str
    min_margin: float

    @property
    def signs(self):
        return np.sign(self.margins)

    def to_dict(self) -> dict:
        return {"region": self.region, "verdict": self.verdict, "min_margin": self.min_margin,
                "max_margin": float(np.max(self.margins)), "threshold": self.threshold,
                "n_samples": int(len(self.samples))}


def check_a1_concavity(domain: Domain, region: BoundaryRegion, metric: MetricField,
                       n_samples: int = 64, threshold: float = 1e-6) -> ConcavityReport:
    """Sample the normal curvature over ``region``.

    Verdicts: ``STRICT_CONCAVE`` (every margin > threshold), ``CONCAVE_DEGENERATE``
    (no margin below ``-threshold`` but some within it) and ``NOT_CONCAVE``.
    """
    c = domain.curve(region.curve)
    s = region.sample(n_samples, c.length)
    for j in c.junctions:
        near = np.abs(np.mod(s - j + c.length / 2, c.length) - c.length / 2) < 1e-9
        if np.any(near):
            raise NonSmooth(f"curvature undefined at the join s={j:.6g} of {c.name!r}")
    m = np.atleast_1d(normal_curvature(domain, region.curve, s, metric))
    mn = float(np.min(m))
    if mn > threshold:
        verdict = "STRICT_CONCAVE"
    elif mn >= -threshold:
        verdict = "CONCAVE_DEGENERATE"
    else:
        verdict = "NOT_CONCAVE"
    return ConcavityReport(region.describe(), s, m, threshold, verdict, mn)
