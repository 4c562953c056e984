"""Exception hierarchy shared by every hjtraj module."""


class HJTrajError(Exception):
    """Base class for all errors raised by hjtraj."""


class SingularPeriod(HJTrajError):
    """Trigonometric arc whose duration hits a conjugate point (sin(omega*dt) ~ 0)."""


class OutOfDomain(HJTrajError):
    """Evaluation time outside the arc's time span."""


class OutOfWindow(HJTrajError):
    """Crossing time outside the open planning window (t0, T)."""


class DegenerateInterface(HJTrajError):
    """Two phases without a proper equal-traffic curve between them."""


class ProjectionAmbiguous(HJTrajError):
    """Projection onto a circle requested from its center."""


class UndefinedRatio(HJTrajError):
    """Convexity ratio ||v||/||u|| undefined because u = 0."""


class Unsupported(HJTrajError):
    """Configuration outside what the bi-phase machinery handles."""


class NoSignChange(HJTrajError):
    """B-curve bisection bracket does not straddle the interface."""


class MaxIterations(HJTrajError):
    """Iterative solver hit its iteration cap; ``partial`` holds the last iterate."""

    def __init__(self, message: str, partial=None) -> None:
        super().__init__(message)
        self.partial = partial


class NewtonDegenerate(HJTrajError):
    """Newton step on the crossing time is ill-defined."""


class EmptyInput(HJTrajError):
    """No samples to process."""


class TooFewSamples(HJTrajError):
    """Not enough samples for the requested local regression."""


class ConstantField(HJTrajError):
    """Traffic field with max == min cannot be normalized."""


class DegenerateFit(HJTrajError):
    """Quadratic fit is rank deficient or has vanishing curvature."""


class EmptyCluster(HJTrajError):
    """A cluster lost all of its points."""
