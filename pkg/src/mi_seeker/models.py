"""Sensor and motion models for a fixed-wing agent measuring target SNR.

Every function broadcasts over leading dimensions: an agent state is any
array whose last axis is ``(x, y, psi)`` and a target is any array whose
last axis is ``(tx, ty)``. The NamedTuple types below are convenient
scalar forms and convert to arrays transparently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ControlOutOfBounds, JacobianSingular

GRAVITY = 9.81

# Slack on the bank-angle bound so grid values equal to u_max always pass.
_BANK_SLACK = 1e-12


class AgentState(NamedTuple):
    x: float
    y: float
    psi: float


class TargetPosition(NamedTuple):
    tx: float
    ty: float


@dataclass(frozen=True)
class SensorParams:
    """SNR sensor constants.

    Attributes:
        alpha: SNR scale.
        beta: range-softening constant [m^2].
        gamma: bearing attenuation base; ``gamma == 1`` drops the bearing term.
        r_var: additive measurement noise variance.
    """

    alpha: float = 1000.0
    beta: float = 100.0
    gamma: float = 3.375
    r_var: float = 2.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "r_var"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"SensorParams.{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class MotionParams:
    """Fixed-wing kinematics at constant speed and altitude.

    ``q_cov`` is the process-noise covariance the *filter* assumes; the
    world simulator carries its own true covariance.
    """

    speed: float = 1.0
    dt: float = 1.0
    g: float = GRAVITY
    u_max: float = float(np.arctan(1.0 / (GRAVITY * 3.0)))
    q_cov: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def __post_init__(self):
        if not self.speed > 0 or not self.dt > 0 or not self.g > 0:
            raise ValueError("speed, dt and g must be positive")
        if not 0 < self.u_max < np.pi / 2:
            raise ValueError(f"u_max must lie in (0, pi/2), got {self.u_max!r}")
        q = np.array(self.q_cov, dtype=float)
        if q.shape != (3, 3):
            raise ValueError(f"q_cov must be 3x3, got shape {q.shape}")
        if not np.allclose(q, q.T, rtol=0, atol=1e-12):
            raise ValueError("q_cov must be symmetric")
        if np.linalg.eigvalsh(q).min() < -1e-12:
            raise ValueError("q_cov must be positive semi-definite")
        q.setflags(write=False)
        object.__setattr__(self, "q_cov", q)

    @classmethod
    def from_turn_radius(cls, speed=1.0, r_min=3.0, dt=1.0, g=GRAVITY, q_cov=None):
        q = np.zeros((3, 3)) if q_cov is None else q_cov
        return cls(speed=speed, dt=dt, g=g, u_max=max_bank_for_radius(speed, r_min, g), q_cov=q)

    @property
    def r_min(self) -> float:
        return self.speed**2 / (self.g * np.tan(self.u_max))

    def with_noise(self, q_cov) -> MotionParams:
        return MotionParams(self.speed, self.dt, self.g, self.u_max, np.asarray(q_cov, dtype=float))


def wrap_angle(angle):
    """Wrap angles to the half-open interval (-pi, pi].

    In-range values pass through bit-for-bit.
    """
    angle = np.asarray(angle, dtype=float)
    wrapped = np.pi - np.mod(np.pi - angle, 2 * np.pi)
    # mod can round up to exactly 2*pi for tiny negative arguments
    wrapped = np.where(wrapped <= -np.pi, wrapped + 2 * np.pi, wrapped)
    return np.where((angle > -np.pi) & (angle <= np.pi), angle, wrapped)


def _split(state, target):
    state = np.asarray(state, dtype=float)
    target = np.asarray(target, dtype=float)
    dx = target[..., 0] - state[..., 0]
    dy = target[..., 1] - state[..., 1]
    return dx, dy, state[..., 2]


def bearing(state, target):
    """Line-of-sight angle relative to the agent heading, in (-pi, pi].

    A target exactly at the agent position has bearing 0 by convention.
    """
    dx, dy, psi = _split(state, target)
    phi = wrap_angle(np.arctan2(dy, dx) - psi)
    phi = np.where((dx == 0) & (dy == 0), 0.0, phi)
    return phi[()] if phi.ndim == 0 else phi


def snr_measure(state, target, params: SensorParams):
    """Noise-free SNR ``alpha * gamma**(-phi**2) / (range**2 + beta)``."""
    dx, dy, _ = _split(state, target)
    phi = bearing(state, target)
    value = params.alpha * np.power(params.gamma, -(phi**2)) / (dx * dx + dy * dy + params.beta)
    return value[()] if np.ndim(value) == 0 else value


def snr_linearization(state, target, params: SensorParams):
    """Return ``(h, jacobian, singular)`` without raising.

    ``singular`` flags entries where agent and target coincide; their
    Jacobian rows are NaN.
    """
    dx, dy, psi = _split(state, target)
    r2 = dx * dx + dy * dy
    singular = r2 == 0
    phi = np.where(singular, 0.0, wrap_angle(np.arctan2(dy, dx) - psi))
    denom = r2 + params.beta
    h = params.alpha * np.power(params.gamma, -(phi**2)) / denom
    # d(log h)/dphi
    dlog_dphi = -2.0 * phi * np.log(params.gamma)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_r2 = np.where(singular, np.nan, 1.0 / r2)
    jac = np.empty(np.shape(h) + (3,))
    jac[..., 0] = h * (2.0 * dx / denom + dlog_dphi * dy * inv_r2)
    jac[..., 1] = h * (2.0 * dy / denom - dlog_dphi * dx * inv_r2)
    jac[..., 2] = np.where(singular, np.nan, -h * dlog_dphi)
    return h, jac, singular


def snr_value_and_jacobian(state, target, params: SensorParams):
    """Return ``(h, dh/dstate)``; the Jacobian has shape ``(..., 3)``.

    Raises:
        JacobianSingular: if any agent coincides with its target.
    """
    h, jac, singular = snr_linearization(state, target, params)
    if np.any(singular):
        raise JacobianSingular("jacobian-singular: agent and target positions coincide")
    return h, jac


def snr_jacobian(state, target, params: SensorParams):
    """Gradient of :func:`snr_measure` with respect to ``(x, y, psi)``."""
    return snr_value_and_jacobian(state, target, params)[1]


def _check_bank(u, motion: MotionParams):
    if np.any(np.abs(u) > motion.u_max + _BANK_SLACK):
        raise ControlOutOfBounds(
            f"control-out-of-bounds: |u| = {np.max(np.abs(u)):.6g} exceeds u_max = {motion.u_max:.6g}"
        )


def fixedwing_step(state, u, motion: MotionParams):
    """Advance one Euler step of the constant-speed fixed-wing model."""
    _check_bank(u, motion)
    state = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    out = np.empty(np.broadcast_shapes(state.shape, u.shape + (3,)))
    v, dt = motion.speed, motion.dt
    out[..., 0] = state[..., 0] + v * np.cos(state[..., 2]) * dt
    out[..., 1] = state[..., 1] + v * np.sin(state[..., 2]) * dt
    out[..., 2] = wrap_angle(state[..., 2] + (motion.g / v) * np.tan(u) * dt)
    return out


def fixedwing_jacobian(state, u, motion: MotionParams):
    """State Jacobian of :func:`fixedwing_step`; shape ``(..., 3, 3)``."""
    _check_bank(u, motion)
    state = np.asarray(state, dtype=float)
    psi = state[..., 2]
    jac = np.zeros(psi.shape + (3, 3))
    jac[..., 0, 0] = jac[..., 1, 1] = jac[..., 2, 2] = 1.0
    jac[..., 0, 2] = -motion.speed * np.sin(psi) * motion.dt
    jac[..., 1, 2] = motion.speed * np.cos(psi) * motion.dt
    return jac


def max_bank_for_radius(speed: float, r_min: float, g: float = GRAVITY) -> float:
    """Bank limit giving minimum turn radius ``r_min = V**2 / (g tan u_max)``."""
    if not (speed > 0 and r_min > 0 and g > 0):
        raise ValueError("speed, r_min and g must be positive")
    return float(np.arctan(speed**2 / (g * r_min)))
