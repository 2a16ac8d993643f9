"""End-to-end studies: observability quotients, admissible and invisibility sweeps, full reports."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import sources as S
from . import wavesim as W
from .config import Scenario, sha256_json
from .errors import ConfigError, ResolutionInsufficient, SidewiseError, UnsupportedDomain
from .geometry import (BoundaryRegion, Domain, MetricField, check_a1_concavity, domain_from_preset,
                       metric_from_preset, pocket_arc_region)
from .rayflow import RayTolerances
from .sgcc import SamplingSpec, SgccVerdict, dilate, verify_sgcc

PPW = 10


# --------------------------------------------------------------------------
# scenario context
# --------------------------------------------------------------------------


@dataclass
class Context:
    scenario: Scenario
    domain: Domain
    metric: MetricField
    source: BoundaryRegion
    nbhd: BoundaryRegion
    observe: BoundaryRegion
    hash: str

    @property
    def ray_tol(self) -> RayTolerances:
        t = self.scenario.tolerances
        return RayTolerances(ode=t.ode, glancing=t.glancing, boundary=t.boundary, dwell=t.dwell)

    @property
    def sampling(self) -> SamplingSpec:
        s = self.scenario.sampling
        return SamplingSpec(n_s=s.n_s, n_angle=s.n_angle, glancing_margin=s.glancing_margin,
                            include_glancing=s.include_glancing, both_lifts=s.both_lifts,
                            random_extra=s.random_extra, seed=self.scenario.seed)


def _region(domain: Domain, spec, label: str) -> BoundaryRegion:
    if spec is None:
        raise ConfigError(f"region {label} is missing from [regions]")
    try:
        domain.curve(spec.curve)
    except SidewiseError:
        raise ConfigError(f"region {label}: domain has no curve {spec.curve!r}") from None
    if spec.preset == "pocket_arc":
        return pocket_arc_region(domain, label)
    if spec.preset is not None:
        raise ConfigError(f"region {label}: unknown region preset {spec.preset!r}")
    if spec.intervals is None:
        return BoundaryRegion(spec.curve, label, None)
    iv = []
    for pair in spec.intervals:
        if len(pair) != 2 or not pair[0] < pair[1]:
            raise ConfigError(f"region {label}: intervals must be [a, b] pairs with a < b")
        iv.append((float(pair[0]), float(pair[1])))
    return BoundaryRegion(spec.curve, label, tuple(iv))


def build_context(sc: Scenario) -> Context:
    """Resolve presets and regions. Raises :class:`ConfigError` before any computation."""
    try:
        domain = domain_from_preset(sc.domain.preset, **sc.domain.params)
        metric = metric_from_preset(sc.metric.preset, **sc.metric.params)
    except TypeError as exc:
        raise ConfigError(f"bad preset parameters: {exc}") from None
    except SidewiseError as exc:
        raise ConfigError(str(exc)) from None
    src = _region(domain, sc.regions.source, "O")
    obs = _region(domain, sc.regions.observe, "O'")
    nbhd = dilate(src, domain, sc.regions.nbhd_fraction, "nbhd")
    return Context(sc, domain, metric, src, nbhd, obs, sc.content_hash())


def solver_grid(ctx: Context, resolution=None):
    """Grid and operator for the scenario domain (annulus presets only)."""
    n1, n2 = resolution or (ctx.scenario.grid.n1, ctx.scenario.grid.n2)
    if ctx.domain.name != "annulus":
        raise UnsupportedDomain(f"the wave solver does not support the {ctx.domain.name!r} domain")
    return W.assemble(ctx.domain, ctx.metric, (n1, n2))


def matched_resolution(ctx: Context, n2: int):
    """Radial count giving a radial step close to the tangential step on the inner circle."""
    r1, r2 = ctx.domain.meta["r1"], ctx.domain.meta["r2"]
    return max(4, int(round(n2 * (r2 - r1) / (2 * math.pi * r1)))), n2


# --------------------------------------------------------------------------
# sources on the solver grid
# --------------------------------------------------------------------------


@dataclass
class SourceRecipe:
    """Serializable description of a boundary source, built on whatever grid a run uses."""

    family: str
    params: dict = field(default_factory=dict)
    scale: float = 1.0

    def scaled(self, lam: float) -> "SourceRecipe":
        return SourceRecipe(self.family, dict(self.params), self.scale * lam)

    def describe(self) -> dict:
        return {"family": self.family, "params": self.params, "scale": self.scale}

    def build(self, ctx: Context, t, s, h) -> S.BoundarySource:
        c = ctx.domain.curve(ctx.source.curve)
        M = ctx.scenario.times.M
        p = self.params
        if self.family == "zero":
            g = S.BoundarySource(t, s, np.zeros((len(t), len(s))), M, c.name, c.length, True, ctx.source,
                                 {"family": "zero"})
        elif self.family == "windowed_sine":
            f0, n_cyc = float(p["f0"]), float(p.get("n_cycles", 4.0))
            start = float(p.get("start", 0.5 * (M - n_cyc / f0)))
            if start < 0 or start + n_cyc / f0 > M:
                raise ConfigError(f"{n_cyc} cycles at f0 = {f0} do not fit in [0, {M}]")
            g = S.admissible_time_only(t, s, lambda tt: S.windowed_sine(tt, f0, n_cyc, start), np.ones_like(s),
                                       float(p.get("kappa", 0.0)), c.name, c.length, True, M, ctx.source, h,
                                       meta={"f0": f0, "n_cycles": n_cyc, "start": start})
        elif self.family == "invisible":
            g = S.invisible_family(t, s, float(p["k"]), tuple(p["omega0"]), c.name, c.length, True, M,
                                   ctx.source, h, s_exp=float(p.get("s_exp", -0.5)),
                                   meta={k: v for k, v in p.items() if k in ("ratio", "j", "omega_g")})
        else:
            raise ConfigError(f"unknown source family {self.family!r}")
        return g.scaled(self.scale) if self.scale != 1.0 else g


def resolution_gate(g: S.BoundarySource, dt: float, ds: float, ppw: int = PPW) -> dict:
    """Points per dominant wavelength in ``t`` and ``s``; raises when either is below ``ppw``."""
    tau, xi = S.dominant_frequencies(g)
    pt = math.inf if tau == 0 else 2 * math.pi / (tau * dt)
    ps = math.inf if xi == 0 else 2 * math.pi / (xi * ds)
    info = {"tau_99": tau, "xi_99": xi, "ppw_t": pt, "ppw_s": ps}
    if min(pt, ps) < ppw:
        raise ResolutionInsufficient(f"source resolved with {min(pt, ps):.1f} points per wavelength (< {ppw})",
                                     **info)
    return info


# --------------------------------------------------------------------------
# quotients
# --------------------------------------------------------------------------


@dataclass
class QuotientRecord:
    h1: float
    l2: float
    trace: float
    Q: float | None
    Q_rel: float | None
    degenerate: bool
    energy_max: float = 0.0
    meta: dict = field(default_factory=dict)

    def check(self) -> bool:
        """Nonnegative norms, ``Q_rel >= Q`` and ``Q_rel - Q == L2 / H1``."""
        if min(self.h1, self.l2, self.trace) < 0:
            return False
        if self.degenerate:
            return True
        return self.Q_rel >= self.Q and abs((self.Q_rel - self.Q) - self.l2 / self.h1) <= 1e-12 * self.Q_rel

    def to_dict(self) -> dict:
        return {"h1": self.h1, "l2": self.l2, "trace": self.trace, "Q": self.Q, "Q_rel": self.Q_rel,
                "degenerate": self.degenerate, "energy_max": self.energy_max, "meta": S._jsonable(self.meta)}


def simulate(ctx: Context, recipe: SourceRecipe, resolution=None, gate: bool = True):
    """Build the source on the solver grid, run the solver and return ``(g, record, grid_info)``."""
    grid, op = solver_grid(ctx, resolution)
    dt = op.stable_dt(grid, ctx.scenario.grid.cfl)
    M, T = ctx.scenario.times.M, ctx.scenario.times.T
    cs = ctx.source.curve
    s = grid.boundary_s[cs]
    t = S.time_grid(dt, M)
    h = np.array([ctx.domain.chart(cs, si, ctx.metric).h for si in s])
    g = recipe.build(ctx, t, s, h)
    info = {"resolution": [grid.shape[0] - 1, grid.shape[1]], "dt": dt}
    if gate and np.any(g.values):
        info.update(resolution_gate(g, dt, g.ds))
    oc = ctx.observe.curve
    so = grid.boundary_s[oc]
    mask = ctx.observe.contains(so, ctx.domain.curve(oc).length, closed=True)
    rec = W.run(grid, op, [W.dirichlet_on(grid, cs, g.values)], M + T, dt=dt, observe=(oc, mask),
                metric=ctx.metric)
    return g, rec, info


def quotient_from(g: S.BoundarySource, rec: W.TraceRecord, t_max: float, meta: dict) -> QuotientRecord:
    h1 = S.sobolev_norm(g, S.SobolevSpec(1.0))
    l2 = S.sobolev_norm(g, S.SobolevSpec(0.0))
    tr = rec.trace_l2(t_max)
    if h1 == 0:
        return QuotientRecord(h1, l2, tr, None, None, True, rec.max_energy(), meta)
    return QuotientRecord(h1, l2, tr, tr / h1, (tr + l2) / h1, False, rec.max_energy(), meta)


def observability_quotient(ctx: Context, recipe: SourceRecipe, resolution=None, gate: bool = True) -> QuotientRecord:
    """``||d_n u||_{L2(Gamma'_{M+T})} / ||g||_{H1(Gamma_M)}`` for one source."""
    g, rec, info = simulate(ctx, recipe, resolution, gate)
    sc = ctx.scenario
    meta = {"scenario_hash": ctx.hash, "source": recipe.describe(), "grid": info,
            "source_meta": {k: v for k, v in g.meta.items() if isinstance(v, (int, float, str, bool, list))}}
    return quotient_from(g, rec, sc.times.M + sc.times.T, meta)


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _quotient_job(args):
    ctx, recipe, resolution = args
    try:
        return observability_quotient(ctx, recipe, resolution)
    except SidewiseError as exc:
        return exc.as_dict()


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------


def admissible_recipes(sc: Scenario) -> list:
    return [SourceRecipe("windowed_sine", {"f0": float(f), "n_cycles": float(n)})
            for f, n in zip(sc.sweep.f0, sc.sweep.n_cycles)]


def admissible_sweep(ctx: Context, recipes: list, verdict: SgccVerdict | None = None, refine: bool = False,
                     resolution=None, threads: int = 1) -> dict:
    """Quotients for a family of admissible sources, sorted by parameters.

    With ``refine`` every source is rerun on the doubled grid and the relative
    change of its quotient is reported.
    """
    if verdict is not None and verdict.status != "VERIFIED_ON_SAMPLES":
        raise ConfigError(f"admissible sweep needs a verified geometry, got {verdict.status}")
    order = sorted(range(len(recipes)), key=lambda i: sorted(recipes[i].params.items()))
    recipes = [recipes[i] for i in order]
    base = resolution or (ctx.scenario.grid.n1, ctx.scenario.grid.n2)
    jobs = [(ctx, r, base) for r in recipes]
    if refine:
        jobs += [(ctx, r, (2 * base[0], 2 * base[1])) for r in recipes]
    out = _map(_quotient_job, jobs, threads)
    rows = []
    for i, r in enumerate(recipes):
        rec = out[i]
        row = {"source": r.describe()}
        if isinstance(rec, dict):
            row["error"] = rec
        else:
            row.update(rec.to_dict())
            if refine and not isinstance(out[len(recipes) + i], dict):
                fine = out[len(recipes) + i]
                row["Q_fine"] = fine.Q
                row["refine_change"] = None if rec.Q in (None, 0) else abs(fine.Q - rec.Q) / rec.Q
        rows.append(row)
    qs = [row["Q"] for row in rows if row.get("Q") is not None]
    summary = {"n": len(rows), "n_ok": len(qs), "flagged": not qs,
               "verdict": verdict.status if verdict is not None else "NOT_ATTACHED"}
    if qs:
        med = float(np.median(qs))
        summary.update(min_Q=float(min(qs)), median_Q=med, max_Q=float(max(qs)),
                       min_over_median=float(min(qs) / med) if med > 0 else 0.0)
        if refine:
            ch = [row["refine_change"] for row in rows if row.get("refine_change") is not None]
            summary["max_refine_change"] = float(max(ch)) if ch else None
    return {"rows": rows, "summary": summary}


def resolution_for_k(ctx: Context, k: float, omega0, level: int = 0):
    """Per-``k`` grid: the tangential count resolves ``k |xi0|`` with ``1.6 * PPW`` points per wavelength."""
    tau0, xi0 = omega0
    nrm = math.hypot(tau0, xi0)
    r1 = ctx.domain.meta["r1"]
    cycles = k * abs(xi0) / nrm * r1
    n2 = max(ctx.scenario.grid.n2 // 2, 2 ** math.ceil(math.log2(1.6 * PPW * max(cycles, 1.0))))
    return matched_resolution(ctx, n2 * 2**level)


def _invisible_job(args):
    ctx, recipe = args
    omega = recipe.params["omega0"]
    k = recipe.params["k"]
    for level in range(3):
        res = resolution_for_k(ctx, k, omega, level)
        try:
            g, rec, info = simulate(ctx, recipe, res, gate=True)
            break
        except ResolutionInsufficient as exc:
            last = exc
        except SidewiseError as exc:
            return {"k": k, "error": exc.as_dict()}
    else:
        return {"k": k, "error": last.as_dict()}
    sc = ctx.scenario
    s_exp = recipe.params.get("s_exp", -0.5)
    norm = S.sobolev_norm(g, S.SobolevSpec(s_exp, check_resolution=False))
    tr = rec.trace_l2(sc.times.M + sc.times.T)
    return {"k": k, "norm_s": norm, "trace": tr, "quotient": tr / norm, "grid": info,
            "in_cone": g.meta.get("in_cone_fraction"), "omega_k": g.meta.get("omega_k"),
            "l2": S.l2_direct(g), **{key: recipe.params[key] for key in ("ratio", "distance_to_glancing")
                                     if key in recipe.params}}


def invisibility_sweep(ctx: Context, ks, omega0=None, glancing_ratios=None, s_exp: float = -0.5,
                       threads: int = 1) -> dict:
    """Trace norms of unit ``H^{s_exp}`` elliptic-cone packets across the ``k`` list.

    With ``glancing_ratios`` the base covector moves toward the glancing cone,
    ``tau_j^2 = ratio_j * h * xi^2``, one ratio per ``k``.
    """
    if glancing_ratios is not None:
        if len(glancing_ratios) != len(ks):
            raise ConfigError("glancing ratios and k list must have equal length")
        h = ctx.domain.chart(ctx.source.curve, 0.0, ctx.metric).h
        recipes = []
        for j, (ratio, k) in enumerate(zip(glancing_ratios, ks)):
            tau_j, xi_j = S.approach_schedule([ratio], h)[0]
            dist = math.hypot(tau_j / math.hypot(tau_j, xi_j) - math.sqrt(h) / math.sqrt(1 + h),
                              xi_j / math.hypot(tau_j, xi_j) - 1 / math.sqrt(1 + h))
            recipes.append(SourceRecipe("invisible", {"k": float(k), "omega0": [tau_j, xi_j], "s_exp": s_exp,
                                                      "ratio": float(ratio), "j": j,
                                                      "distance_to_glancing": dist}))
    else:
        om = list(omega0 if omega0 is not None else (1.0, 3.0))
        recipes = [SourceRecipe("invisible", {"k": float(k), "omega0": om, "s_exp": s_exp}) for k in ks]
    rows = _map(_invisible_job, [(ctx, r) for r in recipes], threads)
    traces = [row.get("trace") for row in rows]
    ok = all(t is not None for t in traces)
    summary = {"n": len(rows), "variant": "glancing" if glancing_ratios is not None else "elliptic"}
    if ok and len(traces) >= 2:
        summary["strictly_decreasing"] = bool(all(b < a for a, b in zip(traces, traces[1:])))
        summary["final_over_first"] = traces[-1] / traces[0] if traces[0] > 0 else None
    else:
        summary["strictly_decreasing"] = None
        summary["final_over_first"] = None
    summary["complete"] = ok
    return {"rows": rows, "summary": summary}


# --------------------------------------------------------------------------
# full study
# --------------------------------------------------------------------------


def run_sgcc(ctx: Context, threads: int = 1) -> SgccVerdict:
    return verify_sgcc(ctx.domain, ctx.metric, ctx.nbhd, ctx.source, ctx.observe, ctx.scenario.times.t_cap,
                       ctx.sampling, ctx.ray_tol, threads)


def full_study(sc: Scenario, threads: int = 1) -> dict:
    """Concavity, SGCC, admissible and invisibility sweeps bundled in one hashed report."""
    ctx = build_context(sc)
    report = {"scenario": sc.to_dict(), "scenario_hash": ctx.hash, "sections": {}, "claims": []}
    sec = report["sections"]
    try:
        conc = check_a1_concavity(ctx.domain, ctx.source, ctx.metric, threshold=sc.tolerances.concavity)
        sec["concavity"] = conc.to_dict()
    except SidewiseError as exc:
        sec["concavity"] = {"error": exc.as_dict()}
    try:
        verdict = run_sgcc(ctx, threads)
        sec["sgcc"] = verdict.to_dict()
    except SidewiseError as exc:
        verdict = None
        sec["sgcc"] = {"error": exc.as_dict()}
    verified = verdict is not None and verdict.status == "VERIFIED_ON_SAMPLES"
    if verified and verdict.T0_observed is not None and not sc.times.T > verdict.T0_observed:
        sec["time_check"] = {"error": f"T = {sc.times.T} does not exceed T0 = {verdict.T0_observed:.6g}"}
        verified = False
    if not verified:
        reason = "geometric control condition not verified; no positive claim"
        sec["admissible"] = {"skipped": reason}
        sec["invisible"] = {"skipped": reason}
        sec["glancing"] = {"skipped": reason}
    else:
        try:
            solver_grid(ctx, (4, 8))
            sec["admissible"] = admissible_sweep(ctx, admissible_recipes(sc), verdict,
                                                 refine=sc.sweep.refine_check, threads=threads)
            sec["invisible"] = invisibility_sweep(ctx, sc.sweep.ks, sc.sweep.omega0, s_exp=sc.sweep.s_exp,
                                                  threads=threads)
            sec["glancing"] = invisibility_sweep(ctx, sc.sweep.ks, glancing_ratios=sc.sweep.glancing_ratios,
                                                 s_exp=sc.sweep.s_exp, threads=threads)
        except UnsupportedDomain as exc:
            for key in ("admissible", "invisible", "glancing"):
                sec.setdefault(key, {"error": exc.as_dict(), "partial": True})
    report["claims"] = _claims(sec)
    report["report_hash"] = sha256_json(S._jsonable(report))
    return report


def _claims(sec: dict) -> list:
    out = []
    conc = sec.get("concavity", {})
    out.append(f"A1 concavity: {conc.get('verdict', 'ERROR')}")
    sg = sec.get("sgcc", {})
    out.append(f"SGCC: {sg.get('status', 'ERROR')}"
               + (f" (T0 = {sg['T0_observed']:.6g})" if sg.get("T0_observed") is not None else ""))
    adm = sec.get("admissible", {})
    if "summary" in adm and adm["summary"].get("min_Q") is not None:
        s = adm["summary"]
        out.append(f"admissible: min Q = {s['min_Q']:.4g}, min/median = {s['min_over_median']:.3g}")
    else:
        out.append("admissible: no claim")
    for key in ("invisible", "glancing"):
        inv = sec.get(key, {})
        if "summary" in inv:
            s = inv["summary"]
            out.append(f"{key}: strictly decreasing = {s['strictly_decreasing']}, "
                       f"final/first = {s['final_over_first']}")
        else:
            out.append(f"{key}: no claim")
    return out
