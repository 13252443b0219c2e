"""Exception hierarchy.

Variant outcomes that callers routinely branch on (no return to a section,
landing on a section boundary, orbit not found) are exceptions too, so that
sweeps can catch exactly the outcome they care about.
"""
from __future__ import annotations

__all__ = [
    "ImpulsiveError",
    "InvalidSystem",
    "OutsidePatch",
    "InverseFailed",
    "FlowError",
    "DomainExit",
    "StepUnderflow",
    "PoincareUndefined",
    "NoReturn",
    "BoundaryLanding",
    "OrbitNotFound",
    "FixedPointOnBoundary",
    "AngleJump",
    "DimensionUnsupported",
    "NotRecurrent",
    "BumpCollision",
    "TubeIntersectsSection",
    "VerificationFailed",
    "NoFreeSegment",
    "ContractionNotAchieved",
    "CrossingsTooClose",
    "BudgetExhausted",
    "ConfigError",
]


class ImpulsiveError(Exception):
    """Base class for all errors raised by this package."""


class InvalidSystem(ImpulsiveError):
    """The system fails one of the standing hypotheses."""


class OutsidePatch(ImpulsiveError, ValueError):
    """A point handed to a chart-based map is not on the patch."""


class InverseFailed(ImpulsiveError):
    """Fixed-point inversion of an impulse did not converge."""


class FlowError(ImpulsiveError):
    """Numerical integration failure."""


class DomainExit(FlowError):
    def __init__(self, time: float, point):
        super().__init__(f"trajectory left the box at t={time:.6g}")
        self.time = time
        self.point = point


class StepUnderflow(FlowError):
    def __init__(self, time: float):
        super().__init__(f"step size underflow at t={time:.6g}")
        self.time = time


class PoincareUndefined(ImpulsiveError):
    """The Poincare map is not defined at the given point."""


class NoReturn(PoincareUndefined):
    """No hit of the impulsive region within the horizon."""


class BoundaryLanding(PoincareUndefined):
    """The hit of the impulsive region lies in its boundary band."""

    def __init__(self, message: str, point=None, time: float | None = None):
        super().__init__(message)
        self.point = point
        self.time = time


class OrbitNotFound(ImpulsiveError):
    def __init__(self, message: str, best=None, residual: float | None = None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class FixedPointOnBoundary(ImpulsiveError):
    def __init__(self, margin: float):
        super().__init__(f"fixed point within tolerance of the boundary (margin {margin:.3g})")
        self.margin = margin


class AngleJump(ImpulsiveError):
    """Boundary refinement budget exhausted while tracking the winding angle."""


class DimensionUnsupported(ImpulsiveError):
    pass


class NotRecurrent(ImpulsiveError):
    pass


class BumpCollision(ImpulsiveError):
    pass


class TubeIntersectsSection(ImpulsiveError):
    pass


class VerificationFailed(ImpulsiveError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class NoFreeSegment(ImpulsiveError):
    pass


class ContractionNotAchieved(ImpulsiveError):
    def __init__(self, ratio: float):
        super().__init__(f"contraction ratio {ratio:.4g} is not below 1")
        self.ratio = ratio


class CrossingsTooClose(ImpulsiveError):
    pass


class BudgetExhausted(ImpulsiveError):
    def __init__(self, report):
        super().__init__("densification budget exhausted")
        self.report = report


class ConfigError(ImpulsiveError, ValueError):
    pass
