"""Boundary data on ``[0, M] x O``: admissible, boundary-wave and elliptic-cone families.

Frequencies are angular throughout: a mode ``exp(i (tau t + xi s))`` has time
frequency ``tau`` and tangential frequency ``xi``; the boundary symbol is
``r0 = tau^2 - h xi^2`` with ``h`` the tangential cometric coefficient.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BandWindowError, ConeLeak, NotElliptic, NotGlancing, ResolutionInsufficient, SourceError
from .geometry import BoundaryRegion

# --------------------------------------------------------------------------
# windows
# --------------------------------------------------------------------------


def smooth_step(x):
    """C-infinity step: 0 for ``x <= 0``, 1 for ``x >= 1``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    out[x >= 1] = 1.0
    m = (x > 0) & (x < 1)
    a = np.exp(-1.0 / x[m])
    b = np.exp(-1.0 / (1.0 - x[m]))
    out[m] = a / (a + b)
    return out


def plateau(x, a, b, ramp):
    """Smooth window equal to 1 on ``[a + ramp, b - ramp]`` and 0 outside ``(a, b)``."""
    x = np.asarray(x, dtype=float)
    return smooth_step((x - a) / ramp) * smooth_step((b - x) / ramp)


def bump(x, a, b):
    """C-infinity bump supported in ``(a, b)`` with maximum 1 at the midpoint."""
    x = np.asarray(x, dtype=float)
    u = (2 * x - a - b) / (b - a)
    out = np.zeros_like(x)
    m = np.abs(u) < 1
    out[m] = np.exp(1.0 - 1.0 / (1.0 - u[m] ** 2))
    return out


def region_window(s, region: BoundaryRegion | None, length: float, ramp_fraction: float = 0.15):
    """Smooth window in arc length: 1 inside the region away from its ends, 0 outside."""
    s = np.asarray(s, dtype=float)
    if region is None or region.is_full(length):
        return np.ones_like(s)
    out = np.zeros_like(s)
    for a, b in region.intervals:
        rel = np.mod(s - a, length)
        w = b - a
        out = np.maximum(out, plateau(rel, 0.0, w, ramp_fraction * w))
    return out


# --------------------------------------------------------------------------
# sources
# --------------------------------------------------------------------------


@dataclass
class BoundarySource:
    """Samples ``values[k, j] = g(t_k, s_j)`` on a uniform grid over ``[0, M]`` and a boundary curve."""

    t: np.ndarray
    s: np.ndarray
    values: np.ndarray
    M: float
    curve: str
    length: float
    periodic: bool
    region: BoundaryRegion | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    @property
    def ds(self):
        return float(self.s[1] - self.s[0])

    def scaled(self, lam: float) -> "BoundarySource":
        return replace(self, values=lam * self.values, meta={**self.meta, "scale": lam * self.meta.get("scale", 1.0)})

    def support_problems(self, tol: float = 1e-12) -> list[str]:
        problems = []
        peak = float(np.max(np.abs(self.values))) if self.values.size else 0.0
        if peak == 0:
            return problems
        if np.max(np.abs(self.values[0])) > tol * max(peak, 1.0) or np.max(np.abs(self.values[-1])) > tol * max(peak, 1.0):
            problems.append("time window does not vanish at the ends of [0, M]")
        if self.t[-1] > self.M + 1e-12 and np.max(np.abs(self.values[self.t > self.M + 1e-12])) > 0:
            problems.append("nonzero samples after t = M")
        if self.region is not None and not self.region.is_full(self.length):
            inside = self.region.contains(self.s, self.length, closed=True)
            if np.any(np.abs(self.values[:, ~inside]) > 0):
                problems.append("nonzero samples outside the source arc")
        return problems

    def to_csv(self) -> str:
        head = {"M": self.M, "curve": self.curve, "length": self.length, "periodic": self.periodic,
                "region": self.region.describe() if self.region else None, "meta": _jsonable(self.meta)}
        buf = io.StringIO()
        buf.write("# " + json.dumps(head, sort_keys=True) + "\n")
        buf.write("t," + ",".join(repr(float(v)) for v in self.s) + "\n")
        for tk, row in zip(self.t, self.values):
            buf.write(repr(float(tk)) + "," + ",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "BoundarySource":
        lines = text.strip().splitlines()
        head = json.loads(lines[0][2:])
        s = np.array([float(v) for v in lines[1].split(",")[1:]])
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:]])
        reg = head["region"]
        region = None
        if reg is not None:
            iv = None if reg["intervals"] is None else tuple(tuple(i) for i in reg["intervals"])
            region = BoundaryRegion(reg["curve"], reg["label"], iv)
        return cls(rows[:, 0], s, rows[:, 1:], head["M"], head["curve"], head["length"], head["periodic"],
                   region, head["meta"])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def time_grid(dt: float, M: float) -> np.ndarray:
    """Solver-aligned sample times ``0, dt, ..., N dt`` with ``N dt >= M``."""
    n = int(math.ceil(M / dt - 1e-9))
    return np.arange(n + 1) * dt


# --------------------------------------------------------------------------
# Sobolev norms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SobolevSpec:
    exponent: float = 1.0
    variant: str = "full"       # "full" space-time H^s, or "mixed" L^2_t H^s_s
    pad: int = 2
    check_resolution: bool = True
    tail_fraction: float = 0.01
    band: float = 0.8


def _spectrum(g: BoundarySource, pad: int, axes: str):
    """Zero-padded FFT with continuous-transform scaling. Returns ``(F, tau, xi, dtau, dxi)``."""
    v = np.asarray(g.values, dtype=float)
    nt, ns = v.shape
    dt, ds = g.dt, (g.ds if ns > 1 else 1.0)
    Nt = nt * pad
    Ns = ns if (g.periodic or ns == 1) else ns * pad
    if axes == "ts":
        F = np.fft.fft2(v, s=(Nt, Ns)) * dt * ds
        tau = 2 * np.pi * np.fft.fftfreq(Nt, dt)
    else:
        F = np.fft.fft(v, n=Ns, axis=1) * ds
        tau = None
    xi = 2 * np.pi * np.fft.fftfreq(Ns, ds)
    dtau = 2 * np.pi / (Nt * dt)
    dxi = 2 * np.pi / (Ns * ds)
    return F, tau, xi, dtau, dxi


def _tail_check(power, tau, xi, spec: SobolevSpec):
    total = float(power.sum())
    if total == 0:
        return 0.0
    mask = np.zeros(power.shape, dtype=bool)
    if tau is not None:
        tmax = np.max(np.abs(tau))
        mask |= (np.abs(tau) > spec.band * tmax)[:, None]
    xmax = np.max(np.abs(xi))
    if xmax > 0 and power.shape[-1] > 8:
        mask |= (np.abs(xi) > spec.band * xmax)[None, :]
    frac = float(power[mask].sum() / total)
    if spec.check_resolution and frac > spec.tail_fraction:
        raise ResolutionInsufficient(f"{100 * frac:.2f}% of the spectral mass sits in the outer band")
    return frac


def sobolev_norm(g: BoundarySource, spec: SobolevSpec = SobolevSpec()) -> float:
    """Sobolev norm of the zero-extended source (periodic in ``s`` on closed curves)."""
    if spec.variant == "full":
        F, tau, xi, dtau, dxi = _spectrum(g, spec.pad, "ts")
        power = np.abs(F) ** 2
        _tail_check(power, tau, xi, spec)
        wgt = (1.0 + tau[:, None] ** 2 + xi[None, :] ** 2) ** spec.exponent
        val = float(np.sum(power * wgt)) * dtau * dxi / (2 * np.pi) ** 2
    elif spec.variant == "mixed":
        F, _, xi, _, dxi = _spectrum(g, spec.pad, "s")
        power = np.abs(F) ** 2
        _tail_check(power, None, xi, spec)
        wgt = (1.0 + xi[None, :] ** 2) ** spec.exponent
        per_t = np.sum(power * wgt, axis=1) * dxi / (2 * np.pi)
        val = float(np.sum(per_t)) * g.dt
    else:
        raise SourceError(f"unknown Sobolev variant {spec.variant!r}")
    return math.sqrt(max(val, 0.0))


def l2_direct(g: BoundarySource) -> float:
    """Riemann-sum L2 norm on the sample grid (the quadrature the FFT norm reproduces)."""
    return math.sqrt(float(np.sum(g.values**2)) * g.dt * (g.ds if g.values.shape[1] > 1 else 1.0))


def spectral_fractions(g: BoundarySource, h, pad: int = 2) -> dict:
    """Mass fractions of the space-time spectrum in ``H`` (``tau^2 > h xi^2``), ``E`` and near ``G``."""
    F, tau, xi, _, _ = _spectrum(g, pad, "ts")
    power = np.abs(F) ** 2
    total = float(power.sum())
    if total == 0:
        return {"hyperbolic": 0.0, "elliptic": 0.0, "tau_rms": 0.0, "xi_rms": 0.0, "r0_centroid": 0.0}
    hh = float(np.mean(h))
    r0 = tau[:, None] ** 2 - hh * xi[None, :] ** 2
    return {
        "hyperbolic": float(power[r0 > 0].sum() / total),
        "elliptic": float(power[r0 < 0].sum() / total),
        "tau_rms": float(math.sqrt(np.sum(power * tau[:, None] ** 2) / total)),
        "xi_rms": float(math.sqrt(np.sum(power * xi[None, :] ** 2) / total)),
        "r0_centroid": float(np.sum(power * r0) / total),
    }


def dominant_frequencies(g: BoundarySource, pad: int = 2, quantile: float = 0.99) -> tuple[float, float]:
    """Frequencies below which ``quantile`` of the spectral mass lies, per axis."""
    F, tau, xi, _, _ = _spectrum(g, pad, "ts")
    power = np.abs(F) ** 2
    total = power.sum()
    if total == 0:
        return 0.0, 0.0

    def q(freqs, marginal):
        order = np.argsort(np.abs(freqs))
        c = np.cumsum(marginal[order]) / marginal.sum()
        return float(np.abs(freqs[order])[np.searchsorted(c, quantile)])

    return q(tau, power.sum(axis=1)), q(xi, power.sum(axis=0))


# --------------------------------------------------------------------------
# families
# --------------------------------------------------------------------------


def windowed_sine(t, f0: float, n_cycles: float = 3.0, start: float = 0.0, phase: float = 0.0):
    """``n_cycles`` of a sine at ``f0`` cycles per unit time under a smooth bump."""
    t = np.asarray(t, dtype=float)
    dur = n_cycles / f0
    return bump(t, start, start + dur) * np.sin(2 * np.pi * f0 * (t - start) + phase)


def admissible_time_only(t, s, w, chi, kappa: float, curve: str, length: float, periodic: bool, M: float,
                         region: BoundaryRegion | None = None, h=1.0, max_spill: float = 0.05,
                         meta: dict | None = None) -> BoundarySource:
    """``g = w(t) * (P_kappa chi)(s)`` truncated to the source arc.

    ``kappa`` is a tangential band in cycles per unit length: ``P_kappa`` keeps
    angular frequencies ``|xi| <= 2 pi kappa`` and rolls off smoothly up to
    ``3 pi kappa``; ``kappa = 0`` keeps only the mean.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    w = np.asarray(w(t) if callable(w) else w, dtype=float)
    chi = np.asarray(chi(s) if callable(chi) else chi, dtype=float)
    ns = len(s)
    ds = s[1] - s[0] if ns > 1 else 1.0
    Ns = ns if periodic else 2 * ns
    X = np.fft.fft(chi, n=Ns)
    xi = 2 * np.pi * np.fft.fftfreq(Ns, ds)
    if kappa <= 0:
        filt = (np.abs(xi) == 0).astype(float)
    else:
        k0 = 2 * np.pi * kappa
        filt = 1.0 - smooth_step((np.abs(xi) - k0) / (0.5 * k0))
    chi_f = np.real(np.fft.ifft(X * filt))[:ns]
    win = region_window(s, region, length)
    spill_mass = float(np.sum((chi_f * (1 - win)) ** 2))
    tot = float(np.sum(chi_f**2))
    spill = spill_mass / tot if tot > 0 else 0.0
    if spill > max_spill:
        raise BandWindowError(f"band-limited profile spills {100 * spill:.1f}% of its mass outside the source arc; "
                              "widen the window or raise the band", spill=spill)
    values = np.outer(w, chi_f * win)
    values[t > M + 1e-12] = 0.0
    g = BoundarySource(t, s, values, M, curve, length, periodic, region,
                       {"family": "admissible", "kappa": kappa, "spill": spill, **(meta or {})})
    fr = spectral_fractions(g, h)
    g.meta["outside_cone_fraction"] = 1.0 - fr["hyperbolic"]
    g.meta["cone_warning"] = bool(1.0 - fr["hyperbolic"] > 0.05)
    return g


def _cone_filter(tau, xi, c: float, edge: float, low: float):
    """Smooth multiplier supported in ``|tau| <= c |xi|`` and away from the origin."""
    ang = np.arctan2(np.abs(tau)[:, None], np.abs(xi)[None, :])
    phi_c = math.atan(c)
    w = edge * phi_c
    cone = 1.0 - smooth_step((ang - (phi_c - w)) / w)
    rad = np.hypot(tau[:, None], xi[None, :])
    hp = smooth_step((rad - low) / low) if low > 0 else 1.0
    return cone * hp


def cone_for(omega, h_min: float, edge: float = 0.1):
    """Cone constant midway (in angle) between ``omega`` and the glancing cone; checks containment."""
    tau0, xi0 = omega
    phi_g = math.atan(math.sqrt(h_min))
    phi_0 = math.atan2(abs(tau0), abs(xi0))
    phi_c = 0.5 * (phi_0 + phi_g)
    if phi_0 > phi_c * (1 - edge):
        raise NotElliptic(f"the cone around omega = {omega} cannot keep a {edge:.0%} edge inside the elliptic set",
                          phi_0=phi_0, phi_c=phi_c, phi_glancing=phi_g)
    return math.tan(phi_c)


def invisible_family(t, s, k: float, omega0, curve: str, length: float, periodic: bool, M: float,
                     region: BoundaryRegion | None = None, h=1.0, c: float | None = None, edge: float = 0.1,
                     s_exp: float = -0.5, sigma_t: float | None = None, low: float = 1.0, b1_ramp: float = 0.15,
                     leak_max: float = 0.01, meta: dict | None = None) -> BoundarySource:
    """Elliptic-cone packet ``b1 * b2(D) f_k`` normalized to unit ``H^{s_exp}`` norm.

    ``omega0`` is normalized to unit length, so ``k`` alone sets the frequency scale.
    ``f_k = cos(k (tau0 t + xi0 s)) * bump`` with a Gaussian bump in ``t`` centred at
    ``M / 2`` (and a window in ``s`` on open arcs). On closed curves the tangential
    frequency is rounded to the nearest periodic mode.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    tau0, xi0 = map(float, omega0)
    nrm0 = math.hypot(tau0, xi0)
    tau0, xi0 = tau0 / nrm0, xi0 / nrm0
    h_arr = np.broadcast_to(np.asarray(h, dtype=float), s.shape)
    b1_s = region_window(s, region, length)
    h_min = float(np.min(h_arr[b1_s > 0])) if np.any(b1_s > 0) else float(np.min(h_arr))
    if tau0**2 >= h_min * xi0**2:
        raise NotElliptic(f"base covector {omega0} is not elliptic (h_min = {h_min:.4g})")
    if c is None:
        c = cone_for((tau0, xi0), h_min, edge)
    elif c >= math.sqrt(h_min) or math.atan2(abs(tau0), abs(xi0)) > math.atan(c) * (1 - edge):
        raise NotElliptic(f"cone constant {c} does not separate omega from the glancing set")
    xi_k = k * xi0
    if periodic:
        xi_k = 2 * np.pi * round(xi_k * length / (2 * np.pi)) / length
    tau_k = k * tau0
    sig = sigma_t if sigma_t is not None else M / 12
    env = np.exp(-0.5 * ((t - 0.5 * M) / sig) ** 2)
    if region is not None and not region.is_full(length):
        env_s = region_window(s, region, length, 0.5)
    else:
        env_s = np.ones_like(s)
    f = np.cos(tau_k * t[:, None] + xi_k * s[None, :]) * env[:, None] * env_s[None, :]
    # b2 on the padded grid
    nt, ns = f.shape
    dt = t[1] - t[0]
    ds = s[1] - s[0]
    Nt = 2 * nt
    Ns = ns if periodic else 2 * ns
    F = np.fft.fft2(f, s=(Nt, Ns))
    tau = 2 * np.pi * np.fft.fftfreq(Nt, dt)
    xi = 2 * np.pi * np.fft.fftfreq(Ns, ds)
    bf = np.real(np.fft.ifft2(F * _cone_filter(tau, xi, c, edge, low)))[:nt, :ns]
    b1 = plateau(t, 0.0, M, b1_ramp * M)[:, None] * b1_s[None, :]
    values = b1 * bf
    g = BoundarySource(t, s, values, M, curve, length, periodic, region,
                       {"family": "invisible", "k": k, "omega0": [tau0, xi0], "omega_k": [tau_k, xi_k], "c": c,
                        "edge": edge, "s_exp": s_exp, "sigma_t": sig, **(meta or {})})
    nrm = sobolev_norm(g, SobolevSpec(s_exp, "full", check_resolution=False))
    if nrm == 0:
        raise ConeLeak("filtered packet vanished: the cone misses the packet at this resolution")
    g.values = values / nrm
    Fg, tg, xg, _, _ = _spectrum(g, 2, "ts")
    power = np.abs(Fg) ** 2
    inside = np.abs(tg)[:, None] <= c * np.abs(xg)[None, :]
    frac = float(power[inside].sum() / power.sum())
    g.meta["in_cone_fraction"] = frac
    if frac < 1 - leak_max:
        raise ConeLeak(f"only {100 * frac:.2f}% of the spectral mass lies in the cone |tau| <= {c:.3g}|xi|",
                       in_cone=frac, k=k)
    return g


def approach_schedule(ratios, h: float = 1.0, xi: float = 1.0):
    """Elliptic covectors ``(tau_j, xi)`` with ``tau_j^2 = ratio_j * h * xi^2`` (ratios below 1)."""
    return [(math.sqrt(r * h) * xi, xi) for r in ratios]


def glancing_family(omega_g, ratios, ks, t, s, curve: str, length: float, periodic: bool, M: float,
                    region: BoundaryRegion | None = None, h=1.0, tol: float = 1e-7, **kw) -> list:
    """Invisible packets at elliptic covectors approaching the glancing covector ``omega_g``."""
    tau_g, xi_g = map(float, omega_g)
    h_arr = np.broadcast_to(np.asarray(h, dtype=float), np.shape(s))
    hh = float(np.mean(h_arr))
    nrm = math.hypot(tau_g, xi_g)
    r0 = (tau_g**2 - hh * xi_g**2) / nrm**2
    if abs(r0) > tol:
        raise NotGlancing(f"base covector {omega_g} has normalized r0 = {r0:.3e}")
    if len(ratios) != len(ks):
        raise SourceError("approach ratios and frequency schedule must have equal length")
    out = []
    for j, (ratio, k) in enumerate(zip(ratios, ks)):
        if not 0 <= ratio < 1:
            raise NotElliptic(f"approach ratio {ratio} does not give an elliptic covector")
        omega_j = (math.copysign(math.sqrt(ratio * hh), tau_g) * abs(xi_g), xi_g)
        dist = math.hypot(omega_j[0] - tau_g, omega_j[1] - xi_g)
        g = invisible_family(t, s, k, omega_j, curve, length, periodic, M, region, h,
                             meta={"family": "glancing", "j": j, "ratio": ratio, "omega_g": [tau_g, xi_g],
                                   "distance_to_glancing": dist}, **kw)
        out.append(g)
    return out


def beta_boundary_wave(beta: float, t, s, g0, g1, chi, curve: str, length: float, M: float,
                       h=1.0, region: BoundaryRegion | None = None) -> BoundarySource:
    """``chi * g`` where ``g_tt = beta d_s(h d_s g)`` on the closed curve, ``g(0) = g0``, ``g_t(0) = g1``.

    Solved by eigendecomposition of the periodic spectral operator ``-D diag(h) D``.
    """
    if beta <= 0:
        raise SourceError("beta must be positive")
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    n = len(s)
    h_arr = np.broadcast_to(np.asarray(h, dtype=float), s.shape).astype(float)
    g0 = np.asarray(g0(s) if callable(g0) else g0, dtype=float)
    g1 = np.asarray(g1(s) if callable(g1) else g1, dtype=float)
    xi = 2 * np.pi * np.fft.fftfreq(n, length / n)
    if n % 2 == 0:
        xi[n // 2] = 0.0                     # drop the unpaired Nyquist mode in the derivative
    D = np.real(np.fft.ifft(1j * xi[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0))
    Lop = -D @ np.diag(h_arr) @ D
    Lop = 0.5 * (Lop + Lop.T)
    lam, V = np.linalg.eigh(Lop)
    lam = np.clip(lam, 0.0, None)
    om = np.sqrt(beta * lam)
    a0, a1 = V.T @ g0, V.T @ g1
    with np.errstate(invalid="ignore", divide="ignore"):
        sinc = np.where(om > 1e-12, np.sin(om[None, :] * t[:, None]) / np.where(om > 1e-12, om, 1.0)[None, :],
                        t[:, None])
    coeff = a0[None, :] * np.cos(om[None, :] * t[:, None]) + a1[None, :] * sinc
    wave = coeff @ V.T
    chi_v = np.asarray(chi(t[:, None], s[None, :]) if callable(chi) else chi, dtype=float)
    values = chi_v * wave
    g = BoundarySource(t, s, values, M, curve, length, True, region, {"family": "beta_wave", "beta": beta})
    fr = spectral_fractions(g, h_arr)
    pos = "H" if beta > 1 else ("G" if beta == 1 else "E")
    g.meta.update(spectral_position=pos, r0_centroid=fr["r0_centroid"], hyperbolic_fraction=fr["hyperbolic"])
    return g
