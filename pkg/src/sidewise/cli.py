"""Command-line interface: ``sidewise <command> --scenario file.toml --out dir``.

Exit codes: 0 success, 1 configuration error, 2 computation error, 3 negative
verdict in ``sgcc --gate`` mode.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import config, experiments as E, sources as S, svg, wavesim as W
from .errors import ConfigError, SidewiseError
from .rayflow import trace
from .sgcc import sample_initials
from .symbols import BoundaryCovector, classify, fiber_count

COMMANDS = ("rays", "classify", "sgcc", "wave", "observe", "sweep-admissible", "sweep-invisible", "study")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sidewise", description="Sidewise observability laboratory")
    p.add_argument("command", choices=COMMANDS)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scenario", help="scenario TOML file")
    src.add_argument("--preset", help=f"embedded scenario ({', '.join(sorted(config.PRESETS))})")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="seed for stress sampling")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--format", choices=("json", "csv"), default=None)
    p.add_argument("--gate", action="store_true", help="sgcc: exit 3 unless the verdict is verified")
    p.add_argument("--glancing", action="store_true", help="sweep-invisible: approach the glancing cone")
    p.add_argument("--n-rays", type=int, default=24, help="rays: number of rays to draw")
    return p


def _load(args) -> config.Scenario:
    if args.scenario:
        sc = config.load(args.scenario)
    else:
        sc = config.preset(args.preset or "annulus")
    if args.seed is not None:
        sc.seed = args.seed
    if args.format is not None:
        sc.output.format = args.format
    config.validate(sc)
    return sc


class _Out:
    def __init__(self, root: Path, sc: config.Scenario):
        self.root = root
        self.sc = sc
        root.mkdir(parents=True, exist_ok=True)
        self.written = []

    def text(self, name: str, content: str):
        path = self.root / name
        path.write_text(content, encoding="utf-8")
        self.written.append(str(path))

    def json(self, name: str, obj):
        payload = {"scenario": self.sc.to_dict(), "scenario_hash": self.sc.content_hash(), "result": obj}
        self.text(name, json.dumps(S._jsonable(payload), indent=2, sort_keys=True) + "\n")

    def table(self, name: str, rows: list):
        if self.sc.output.format == "csv":
            flat = [_flatten(r) for r in rows]
            keys = sorted({k for r in flat for k in r})
            buf = io.StringIO()
            w = csv.DictWriter(buf, fieldnames=keys)
            w.writeheader()
            w.writerows(flat)
            self.text(name + ".csv", f"# scenario_hash={self.sc.content_hash()}\n" + buf.getvalue())
        else:
            self.json(name + ".json", rows)

    def figure(self, name: str, content: str):
        if self.sc.output.figures:
            self.text(name, content)


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, (list, tuple)):
            out[key] = json.dumps(S._jsonable(v))
        else:
            out[key] = v
    return out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_rays(ctx, out, args):
    ics = sample_initials(ctx.domain, ctx.metric, ctx.source, max(2, args.n_rays // 4), 4,
                          include_glancing=False, check_concavity=False)[: args.n_rays]
    paths, summaries = [], []
    for ic in ics:
        path = trace(ic.boundary, ctx.domain, ctx.metric, ctx.scenario.times.t_cap, [ctx.source, ctx.observe],
                     lift=ic.lift, tol=ctx.ray_tol)
        data, _ = path.samples()
        paths.append(data[:, 1:3])
        summaries.append({"initial": ic.describe(), **path.summary()})
    out.json("rays.json", summaries)
    out.figure("rays.svg", svg.domain_figure(ctx.domain, paths, [ctx.source, ctx.observe],
                                             title=f"{ctx.scenario.name}: rays from O"))
    return 0


def cmd_classify(ctx, out, args):
    c = ctx.domain.curve(ctx.source.curve)
    rows = []
    for s in ctx.source.sample(16, c.length):
        h = ctx.domain.chart(c.name, s, ctx.metric).h
        for ang in np.linspace(0.0, math.pi / 2, 7):
            b = BoundaryCovector(c.name, float(s), 0.0, math.sin(ang) * math.sqrt(h), math.cos(ang))
            cls = classify(b, ctx.domain, ctx.metric, ctx.scenario.tolerances.glancing)
            rows.append({"curve": c.name, "s": float(s), "tau": b.tau, "xi_t": b.xi_t, "class": cls.label,
                         "r0": cls.r0, "dn_r": cls.dn_r, "fibers": fiber_count(b, ctx.domain, ctx.metric)})
    out.table("classify", rows)
    return 0


def cmd_sgcc(ctx, out, args):
    verdict = E.run_sgcc(ctx, args.threads)
    out.json("sgcc.json", verdict.to_dict())
    paths = []
    for v in verdict.violations[:8]:
        if v.path is not None:
            paths.append([[ev["x"][0], ev["x"][1]] for ev in v.path.get("events", [])])
    out.figure("sgcc.svg", svg.domain_figure(ctx.domain, paths, [ctx.source, ctx.observe],
                                             title=f"SGCC {verdict.status}"))
    print(f"SGCC {verdict.status} T0={verdict.T0_observed} samples={verdict.n_samples} "
          f"violations={len(verdict.violations)} flagged={verdict.flagged_count}")
    if args.gate and verdict.status != "VERIFIED_ON_SAMPLES":
        return 3
    return 0


def _recipe(sc) -> E.SourceRecipe:
    s = sc.source
    if s.family == "windowed_sine":
        return E.SourceRecipe("windowed_sine", {"f0": s.f0, "n_cycles": s.n_cycles, "kappa": s.kappa}, s.scale)
    if s.family == "invisible":
        return E.SourceRecipe("invisible", {"k": s.k, "omega0": list(s.omega0), "s_exp": s.s_exp}, s.scale)
    return E.SourceRecipe("zero", {}, s.scale)


def cmd_wave(ctx, out, args):
    g, rec, info = E.simulate(ctx, _recipe(ctx.scenario))
    out.text("trace.csv", rec.to_csv())
    out.json("wave.json", {"grid": info, "trace_l2": rec.trace_l2(), "max_energy": rec.max_energy(),
                           "source": g.meta})
    out.figure("energy.svg", svg.line_plot({"E": (rec.energy_times, rec.energy)}, "t", "energy",
                                           title="discrete energy"))
    return 0


def cmd_observe(ctx, out, args):
    q = E.observability_quotient(ctx, _recipe(ctx.scenario))
    out.json("quotient.json", q.to_dict())
    print(f"Q = {q.Q}  Q_rel = {q.Q_rel}  degenerate = {q.degenerate}")
    return 0


def cmd_sweep_admissible(ctx, out, args):
    verdict = E.run_sgcc(ctx, args.threads)
    res = E.admissible_sweep(ctx, E.admissible_recipes(ctx.scenario), verdict,
                             refine=ctx.scenario.sweep.refine_check, threads=args.threads)
    out.table("admissible", res["rows"])
    out.json("admissible_summary.json", res["summary"])
    print(json.dumps(res["summary"], sort_keys=True))
    return 0


def cmd_sweep_invisible(ctx, out, args):
    sw = ctx.scenario.sweep
    if args.glancing:
        res = E.invisibility_sweep(ctx, sw.ks, glancing_ratios=sw.glancing_ratios, s_exp=sw.s_exp,
                                   threads=args.threads)
    else:
        res = E.invisibility_sweep(ctx, sw.ks, sw.omega0, s_exp=sw.s_exp, threads=args.threads)
    out.table("invisible", res["rows"])
    out.json("invisible_summary.json", res["summary"])
    out.figure("decay.svg", svg.decay_figure({res["summary"]["variant"]: res}))
    print(json.dumps(res["summary"], sort_keys=True))
    return 0


def cmd_study(ctx, out, args):
    report = E.full_study(ctx.scenario, args.threads)
    out.text("report.json", json.dumps(S._jsonable(report), indent=2, sort_keys=True) + "\n")
    text = [f"scenario {ctx.scenario.name} ({report['scenario_hash'][:12]})"] + report["claims"]
    text.append(f"report hash {report['report_hash']}")
    out.text("summary.txt", "\n".join(text) + "\n")
    sec = report["sections"]
    sweeps = {k: sec[k] for k in ("invisible", "glancing") if "rows" in sec.get(k, {})}
    if sweeps:
        out.figure("decay.svg", svg.decay_figure(sweeps))
    print("\n".join(text))
    return 0


HANDLERS = {"rays": cmd_rays, "classify": cmd_classify, "sgcc": cmd_sgcc, "wave": cmd_wave,
            "observe": cmd_observe, "sweep-admissible": cmd_sweep_admissible,
            "sweep-invisible": cmd_sweep_invisible, "study": cmd_study}


def _fail(exc: SidewiseError, code: int) -> int:
    print(json.dumps(exc.as_dict(), sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        sc = _load(args)
        ctx = E.build_context(sc)
        out = _Out(Path(args.out), sc)
    except ConfigError as exc:
        return _fail(exc, 1)
    try:
        return HANDLERS[args.command](ctx, out, args)
    except ConfigError as exc:
        return _fail(exc, 1)
    except SidewiseError as exc:
        return _fail(exc, 2)


if __name__ == "__main__":
    sys.exit(main())
