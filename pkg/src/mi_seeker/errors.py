"""Exception types raised by the estimation and planning code."""

from __future__ import annotations


class MiSeekerError(Exception):
    """Base class for all package errors."""


class ControlOutOfBounds(MiSeekerError, ValueError):
    """A bank-angle command exceeded the vehicle limit."""


class JacobianSingular(MiSeekerError, ValueError):
    """Sensor linearization requested where agent and target coincide."""


class WeightCollapse(MiSeekerError, RuntimeError):
    """Every particle likelihood underflowed; the filter has diverged."""


class MomentDegenerate(MiSeekerError, ValueError):
    """The moment-matched measurement covariance is not positive definite."""


class PlannerStarved(MiSeekerError, RuntimeError):
    """No candidate action produced a finite objective."""


class ConfigError(MiSeekerError, ValueError):
    """Invalid or unreadable experiment configuration."""
