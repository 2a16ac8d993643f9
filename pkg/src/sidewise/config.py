"""Scenario documents: strict TOML parsing, serialization and embedded presets."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .errors import ConfigError


@dataclass
class DomainSection:
    preset: str = "annulus"
    params: dict = field(default_factory=dict)


@dataclass
class MetricSection:
    preset: str = "identity"
    params: dict = field(default_factory=dict)


@dataclass
class RegionSpec:
    curve: str = ""
    intervals: list | None = None      # arc-length intervals [[a, b], ...]; omitted = whole curve
    preset: str | None = None          # "pocket_arc" picks the concave arc of the pocket preset


@dataclass
class RegionsSection:
    source: RegionSpec | None = None
    observe: RegionSpec | None = None
    nbhd_fraction: float = 0.05


@dataclass
class TimesSection:
    M: float = 8.0
    T: float = 2.0
    t_cap: float = 10.0


@dataclass
class GridSection:
    n1: int = 40
    n2: int = 256
    cfl: float = 0.8


@dataclass
class SourceSection:
    family: str = "windowed_sine"      # windowed_sine | invisible | zero
    f0: float = 1.5
    n_cycles: float = 4.0
    kappa: float = 0.0
    k: float = 8.0
    omega0: list = field(default_factory=lambda: [1.0, 3.0])
    s_exp: float = -0.5
    scale: float = 1.0


@dataclass
class TolerancesSection:
    glancing: float = 1e-7
    ode: float = 1e-10
    boundary: float = 1e-10
    dwell: float = 1e-6
    concavity: float = 1e-6


@dataclass
class SamplingSection:
    n_s: int = 16
    n_angle: int = 8
    glancing_margin: float = 0.05
    include_glancing: bool = True
    both_lifts: bool = True
    random_extra: int = 0


@dataclass
class SweepSection:
    f0: list = field(default_factory=lambda: [1.0, 1.1, 1.2, 1.35, 1.5, 1.65, 1.8, 2.0])
    n_cycles: list = field(default_factory=lambda: [3.0, 4.0, 5.0, 6.0, 3.0, 4.0, 5.0, 6.0])
    refine_check: bool = False
    ks: list = field(default_factory=lambda: [4, 8, 16, 32])
    omega0: list = field(default_factory=lambda: [1.0, 3.0])
    s_exp: float = -0.5
    glancing_ratios: list = field(default_factory=lambda: [0.1, 0.15, 0.2, 0.25])


@dataclass
class OutputSection:
    format: str = "json"
    figures: bool = True


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 0
    domain: DomainSection = field(default_factory=DomainSection)
    metric: MetricSection = field(default_factory=MetricSection)
    regions: RegionsSection = field(default_factory=RegionsSection)
    times: TimesSection = field(default_factory=TimesSection)
    grid: GridSection = field(default_factory=GridSection)
    source: SourceSection = field(default_factory=SourceSection)
    tolerances: TolerancesSection = field(default_factory=TolerancesSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return _strip_none(dataclasses.asdict(self))

    def content_hash(self) -> str:
        return sha256_json(self.to_dict())


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------


def _strip_none(obj):
    if isinstance(obj, dict):
        return {k: _strip_none(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, list):
        return [_strip_none(v) for v in obj]
    return obj


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def sha256_json(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def _coerce(value, tp, where):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", typing.Union)):
        inner = [a for a in args if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, inner[0], where)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a table")
        return _build(tp, value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        if not math.isfinite(value):
            raise ConfigError(f"{where}: must be finite")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if tp is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected an array")
        return copy.deepcopy(value)
    if tp is dict or origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a table")
        return copy.deepcopy(value)
    return value


def _build(cls, data: dict, where: str):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where or 'scenario'}: unknown key(s) {', '.join(unknown)}", keys=unknown)
    kw = {}
    for name in known & set(data):
        kw[name] = _coerce(data[name], hints[name], f"{where}.{name}" if where else name)
    return cls(**kw)


def scenario_from_dict(data: dict) -> Scenario:
    sc = _build(Scenario, data, "")
    validate(sc)
    return sc


def validate(sc: Scenario) -> None:
    t = sc.times
    if t.M <= 0 or t.T <= 0 or t.t_cap <= 0:
        raise ConfigError("times.M, times.T and times.t_cap must be positive")
    if sc.grid.n1 < 4 or sc.grid.n2 < 8:
        raise ConfigError("grid is too coarse (need n1 >= 4, n2 >= 8)")
    if not 0 < sc.grid.cfl <= 0.9:
        raise ConfigError("grid.cfl must lie in (0, 0.9]")
    if sc.output.format not in ("json", "csv"):
        raise ConfigError("output.format must be json or csv")
    if sc.source.family not in ("windowed_sine", "invisible", "zero"):
        raise ConfigError(f"unknown source family {sc.source.family!r}")
    if len(sc.sweep.f0) != len(sc.sweep.n_cycles):
        raise ConfigError("sweep.f0 and sweep.n_cycles must have equal length")
    if not 0 <= sc.seed < 2**64:
        raise ConfigError("seed must fit in an unsigned 64-bit integer")


def loads(text: str) -> Scenario:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed scenario: {exc}") from None
    return scenario_from_dict(data)


def load(path) -> Scenario:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"scenario file not found: {p}")
    return loads(p.read_text(encoding="utf-8"))


def dumps(sc: Scenario) -> str:
    return tomli_w.dumps(sc.to_dict())


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------


def _annulus() -> Scenario:
    return Scenario(
        name="annulus",
        domain=DomainSection("annulus", {"r1": 1.0, "r2": 2.0}),
        regions=RegionsSection(RegionSpec("inner"), RegionSpec("outer")),
    )


def _annulus_quarter() -> Scenario:
    sc = _annulus()
    sc.name = "annulus_quarter"
    sc.regions.observe = RegionSpec("outer", [[0.0, math.pi]])
    return sc


def _disc() -> Scenario:
    return Scenario(
        name="disc",
        domain=DomainSection("disc", {"r": 1.0}),
        regions=RegionsSection(RegionSpec("circle", [[-math.pi / 8, math.pi / 8]]),
                               RegionSpec("circle", [[3 * math.pi / 8, 5 * math.pi / 8]])),
    )


def _pocket() -> Scenario:
    return Scenario(
        name="pocket",
        domain=DomainSection("pocket", {}),
        times=TimesSection(M=8.0, T=3.0, t_cap=10.0),
        regions=RegionsSection(RegionSpec("boundary", preset="pocket_arc"),
                               RegionSpec("boundary", [[3.8, 11.6]])),
    )


def _peanut() -> Scenario:
    return Scenario(
        name="peanut",
        domain=DomainSection("peanut", {"r0": 1.0, "eps": 0.3}),
        regions=RegionsSection(RegionSpec("boundary", [[1.55, 1.87]]), RegionSpec("boundary", [[4.96, 5.28]])),
    )


PRESETS = {"annulus": _annulus, "annulus_quarter": _annulus_quarter, "disc": _disc, "pocket": _pocket,
           "peanut": _peanut}


def preset(name: str) -> Scenario:
    try:
        sc = PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None
    validate(sc)
    return sc
