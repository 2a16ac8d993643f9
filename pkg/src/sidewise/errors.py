"""Exception hierarchy. Every error carries a short machine-readable ``code``."""

from __future__ import annotations


class SidewiseError(Exception):
    code = "ERROR"

    def __init__(self, message: str = "", **details):
        super().__init__(message)
        self.details = details

    def as_dict(self) -> dict:
        return {"code": self.code, "message": str(self), **{k: repr(v) for k, v in self.details.items()}}


class ConfigError(SidewiseError):
    code = "CONFIG_ERROR"


# geometry
class GeometryError(SidewiseError):
    code = "GEOMETRY_ERROR"


class AmbiguousProjection(GeometryError):
    code = "AMBIGUOUS_PROJECTION"


class OutsideCollar(GeometryError):
    code = "OUTSIDE_COLLAR"


class NonSmooth(GeometryError):
    code = "NON_SMOOTH"


# symbols
class NotHyperbolic(SidewiseError):
    code = "NOT_HYPERBOLIC"


# rays
class RayError(SidewiseError):
    code = "RAY_ERROR"

    def __init__(self, message: str = "", partial_path=None, **details):
        super().__init__(message, **details)
        self.partial_path = partial_path


class StiffFailure(RayError):
    code = "STIFF_FAILURE"


class TauDegenerate(RayError):
    code = "TAU_DEGENERATE"


class MissedEvent(RayError):
    code = "MISSED_EVENT"


class DenominatorDegenerate(RayError):
    code = "DENOMINATOR_DEGENERATE"


# solver
class SolverError(SidewiseError):
    code = "SOLVER_ERROR"


class UnsupportedDomain(SolverError):
    code = "UNSUPPORTED_DOMAIN"


class CFLViolation(SolverError):
    code = "CFL_VIOLATION"


class NaNDetected(SolverError):
    code = "NAN_DETECTED"


# sources
class SourceError(SidewiseError):
    code = "SOURCE_ERROR"


class ResolutionInsufficient(SourceError):
    code = "RESOLUTION_INSUFFICIENT"


class ConeLeak(SourceError):
    code = "CONE_LEAK"


class BandWindowError(SourceError):
    code = "BAND_WINDOW_INCOMPATIBLE"


class NotElliptic(SourceError):
    code = "NOT_ELLIPTIC"


class NotGlancing(SourceError):
    code = "NOT_GLANCING"
