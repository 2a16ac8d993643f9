"""Sampling-based verification of the sidewise geometric control condition.

Every ray issued from the source neighbourhood must reach the measurement arc at a
hyperbolic or strictly gliding point before meeting the closed source arc again.
Verdicts hold on the sampled grid only.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import RayError, SidewiseError
from .geometry import BoundaryRegion, Domain, MetricField, check_a1_concavity, check_region_nesting
from .rayflow import EventKind, RayTolerances, characteristic_phase, trace
from .symbols import BoundaryCovector, GlancingKind, PhasePoint, Region

GAMMA = "__gamma__"
OBS = "__obs__"


@dataclass(frozen=True)
class CollarSpec:
    """Interior samples ``x(s) + d n_vec(s)`` with ``0 < d <= width``."""

    width: float = 0.1
    n_s: int = 16
    n_depth: int = 3
    n_dir: int = 16


@dataclass(frozen=True)
class SamplingSpec:
    n_s: int = 16
    n_angle: int = 8
    glancing_margin: float = 0.05
    include_glancing: bool = True
    both_lifts: bool = True
    random_extra: int = 0
    seed: int = 0

    def describe(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class InitialCondition:
    index: int
    kind: str
    curve: str
    s: float
    lift: object = None
    angle: float | None = None
    depth: float | None = None
    direction: float | None = None
    boundary: BoundaryCovector | None = None
    phase: PhasePoint | None = None

    def describe(self) -> dict:
        d = {"index": self.index, "kind": self.kind, "curve": self.curve, "s": self.s}
        for k in ("lift", "angle", "depth", "direction"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        return d


@dataclass
class SgccSample:
    initial: dict
    outcome: str               # qualified | gamma_first | timeout | error
    hit_time: float | None = None
    hit_class: str | None = None
    flagged: bool = False
    error: str | None = None
    path: dict | None = None

    def to_dict(self) -> dict:
        d = {"initial": self.initial, "outcome": self.outcome, "hit_time": self.hit_time,
             "hit_class": self.hit_class, "flagged": self.flagged}
        if self.error:
            d["error"] = self.error
        if self.path is not None:
            d["path"] = self.path
        return d


@dataclass
class SgccVerdict:
    status: str
    T0_observed: float | None
    n_samples: int
    n_qualified: int
    violations: list = field(default_factory=list)
    flagged: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    sampling: dict = field(default_factory=dict)
    hit_times: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def flagged_count(self) -> int:
        return len(self.flagged)

    def to_dict(self, max_violations: int = 20) -> dict:
        return {
            "status": self.status,
            "T0_observed": self.T0_observed,
            "n_samples": self.n_samples,
            "n_qualified": self.n_qualified,
            "n_violations": len(self.violations),
            "violations": [v.to_dict() for v in self.violations[:max_violations]],
            "flagged_count": self.flagged_count,
            "flagged": [f.to_dict() for f in self.flagged[:max_violations]],
            "n_errors": len(self.errors),
            "errors": [e.to_dict() for e in self.errors[:max_violations]],
            "sampling": self.sampling,
            "warnings": self.warnings,
        }


def dilate(region: BoundaryRegion, domain: Domain, fraction: float = 0.05, label: str = "nbhd") -> BoundaryRegion:
    return region.dilate(fraction, domain.curve(region.curve).length, label)


def sample_initials(domain: Domain, metric: MetricField, region: BoundaryRegion, n_s: int, n_angle: int,
                    glancing_margin: float = 0.05, include_glancing: bool = True, both_lifts: bool = False,
                    interior: CollarSpec | None = None, random_extra: int = 0, seed: int = 0,
                    check_concavity: bool = True) -> list:
    """Deterministic grid of initial conditions over ``region`` (plus optional collar points)."""
    c = domain.curve(region.curve)
    if region.arc_length(c.length) <= 0 or n_s <= 0:
        raise SidewiseError("empty sampling region")
    if check_concavity:
        rep = check_a1_concavity(domain, region, metric, n_samples=max(16, n_s))
        if rep.verdict != "STRICT_CONCAVE":
            warnings.warn(f"source neighbourhood is {rep.verdict}; strict concavity is a standing hypothesis",
                          stacklevel=2)
    out = []
    s_grid = region.sample(n_s, c.length)
    if n_angle == 1:
        angles = np.array([0.0])
    elif n_angle > 1:
        half = math.pi / 2 - glancing_margin
        angles = np.linspace(-half, half, n_angle)
    else:
        angles = np.array([])
    rng = np.random.default_rng(seed)
    extra = []
    if random_extra:
        total = region.arc_length(c.length)
        pos = rng.uniform(0, total, random_extra)
        s_extra = region.sample(4096, c.length)[np.minimum((pos / total * 4096).astype(int), 4095)]
        a_extra = rng.uniform(-(math.pi / 2 - glancing_margin), math.pi / 2 - glancing_margin, random_extra)
        extra = list(zip(s_extra, a_extra))

    def boundary_ic(s, theta, lift):
        ch = domain.chart(c.name, s, metric)
        if theta is None:
            xi_t = lift / math.sqrt(ch.h)
            b = BoundaryCovector(c.name, float(s), 0.0, 1.0, xi_t).normalized()
            return InitialCondition(len(out), "boundary", c.name, float(s), "glancing", None, boundary=b)
        xi_t = -math.sin(theta) / math.sqrt(ch.h)
        b = BoundaryCovector(c.name, float(s), 0.0, 1.0, xi_t).normalized()
        return InitialCondition(len(out), "boundary", c.name, float(s), lift, float(theta), boundary=b)

    for s in s_grid:
        for th in angles:
            out.append(boundary_ic(s, th, -1))
            if both_lifts:
                out.append(boundary_ic(s, th, +1))
        if include_glancing:
            for sgn in (+1, -1):
                ic = boundary_ic(s, None, sgn)
                out.append(replace(ic, angle=float(sgn) * math.pi / 2))
    for s, th in extra:
        out.append(boundary_ic(s, th, -1))
    if interior is not None:
        for s in region.sample(interior.n_s, c.length):
            for j in range(interior.n_depth):
                depth = interior.width * (j + 1) / interior.n_depth
                x = domain.collar_map(c.name, s, depth, metric)
                for k in range(interior.n_dir):
                    phi = 2 * math.pi * (k + 0.5) / interior.n_dir
                    ph = characteristic_phase(x, (math.cos(phi), math.sin(phi)), metric)
                    out.append(InitialCondition(len(out), "interior", c.name, float(s), depth=float(depth),
                                                direction=float(phi), phase=ph))
    return out


def _qualifies(event, tol: RayTolerances):
    cls = event.classification
    if cls is None:
        return False, False
    if cls.region is Region.HYPERBOLIC:
        if event.flagged or cls.r0 < tol.glancing:
            return False, True
        return True, False
    if cls.region is Region.GLANCING and cls.kind is GlancingKind.STRICTLY_GLIDING:
        return True, False
    return False, cls.region is Region.GLANCING


def _run_half(start, lift, domain, metric, gamma, obs, t_cap, tol, keep_path):
    state = {"outcome": "timeout", "hit_time": None, "hit_class": None, "flagged": False}

    def stop(event, path):
        if event.flagged:
            state["flagged"] = True
        if event.kind is not EventKind.REGION_HIT:
            return False
        if event.label == GAMMA and event.t > tol.dwell:
            state["outcome"] = "gamma_first"
            state["hit_time"] = event.t
            state["hit_class"] = event.classification.label if event.classification else None
            return True
        if event.label == OBS:
            ok, marginal = _qualifies(event, tol)
            if ok:
                state["outcome"] = "qualified"
                state["hit_time"] = event.t
                state["hit_class"] = event.classification.label
                return True
            if marginal:
                state["flagged"] = True
        return False

    path = trace(start, domain, metric, t_cap, [gamma, obs], lift=lift, tol=tol, stop=stop)
    return state, (path.summary() if keep_path else None)


def _evaluate(args):
    ic, domain, metric, gamma, obs, t_cap, tol, halfray = args
    try:
        if ic.kind == "boundary":
            st, path = _run_half(ic.boundary, ic.lift if ic.lift != "glancing" else "glancing", domain, metric,
                                 gamma, obs, t_cap, tol, True)
        else:
            halves = [ic.phase, ic.phase.reversed()] if halfray else [ic.phase]
            results = [_run_half(h, None, domain, metric, gamma, obs, t_cap, tol, True) for h in halves]
            ok = [r for r in results if r[0]["outcome"] == "qualified"]
            if ok:
                st, path = min(ok, key=lambda r: r[0]["hit_time"])
            else:
                st, path = results[0]
                if any(r[0]["outcome"] == "gamma_first" for r in results):
                    st = dict(st, outcome="gamma_first")
    except (RayError, SidewiseError) as err:
        return SgccSample(ic.describe(), "error", error=f"{err.code}: {err}")
    keep = st["outcome"] != "qualified" or st["flagged"]
    return SgccSample(ic.describe(), st["outcome"], st["hit_time"], st["hit_class"], st["flagged"],
                      path=path if keep else None)


def _map(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * threads))))
    return [fn(it) for it in items]


def _aggregate(samples, sampling, warn):
    samples = sorted(samples, key=lambda s: s.initial["index"])
    violations, flagged, errors, times = [], [], [], []
    for smp in samples:
        if smp.outcome == "error":
            errors.append(smp)
        elif smp.flagged:
            flagged.append(smp)
        elif smp.outcome == "qualified":
            times.append(smp.hit_time)
        else:
            violations.append(smp)
    if violations:
        status = "VIOLATED"
    elif errors:
        status = "INCONCLUSIVE"
    else:
        status = "VERIFIED_ON_SAMPLES"
    t0 = max(times) if times else None
    return SgccVerdict(status, t0, len(samples), len(times), violations, flagged, errors, sampling, times, warn)


def verify_sgcc(domain: Domain, metric: MetricField, nbhd: BoundaryRegion, source: BoundaryRegion,
                observe: BoundaryRegion, t_cap: float, sampling: SamplingSpec = SamplingSpec(),
                tol: RayTolerances = RayTolerances(), threads: int = 1) -> SgccVerdict:
    """Trace every sampled ray from ``nbhd`` and check it reaches ``observe`` before ``source``."""
    problems = check_region_nesting(source, nbhd, observe, lambda n: domain.curve(n).length)
    warn = []
    if problems:
        raise SidewiseError("; ".join(problems))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ics = sample_initials(domain, metric, nbhd, sampling.n_s, sampling.n_angle, sampling.glancing_margin,
                              sampling.include_glancing, sampling.both_lifts, None, sampling.random_extra,
                              sampling.seed)
    warn += [str(w.message) for w in caught]
    gamma = replace(source, label=GAMMA)
    obs = replace(observe, label=OBS)
    items = [(ic, domain, metric, gamma, obs, t_cap, tol, False) for ic in ics]
    samples = _map(_evaluate, items, threads)
    desc = {**sampling.describe(), "t_cap": t_cap, "kind": "boundary"}
    return _aggregate(samples, desc, warn)


def verify_halfray(domain: Domain, metric: MetricField, collar: CollarSpec, collar_region: BoundaryRegion,
                   observe: BoundaryRegion, source: BoundaryRegion, t_horizon: float,
                   tol: RayTolerances = RayTolerances(), threads: int = 1) -> SgccVerdict:
    """Both half-rays from interior collar points; one of them must qualify before ``t_horizon``."""
    ics = sample_initials(domain, metric, collar_region, 1, 0, include_glancing=False, interior=collar,
                          check_concavity=False)
    ics = [ic for ic in ics if ic.kind == "interior"]
    gamma = replace(source, label=GAMMA)
    obs = replace(observe, label=OBS)
    items = [(ic, domain, metric, gamma, obs, t_horizon, tol, True) for ic in ics]
    samples = _map(_evaluate, items, threads)
    desc = {**collar.__dict__, "t_horizon": t_horizon, "kind": "collar"}
    return _aggregate(samples, desc, [])
