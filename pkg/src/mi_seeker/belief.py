"""Rao-Blackwellized belief over a stationary target and the agents.

The target posterior is a weighted particle set. Conditioned on each
particle, every agent carries its own EKF, so the bank of Gaussians has
batch shape ``(n_particles, n_agents)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import models
from .errors import WeightCollapse
from .models import MotionParams, SensorParams

LOG_2PI = float(np.log(2 * np.pi))

# Nudges comb positions past cumulative-sum rounding so that a tooth landing
# exactly on a boundary selects the upper particle.
_COMB_NUDGE = 1e-12


def symmetrize(cov):
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


@dataclass
class GaussianBelief:
    """Mean ``(..., 3)`` and covariance ``(..., 3, 3)``; may be batched."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)

    @property
    def batch_shape(self):
        return self.mean.shape[:-1]

    def __getitem__(self, index):
        return GaussianBelief(self.mean[index], self.cov[index])

    def copy(self):
        return GaussianBelief(self.mean.copy(), self.cov.copy())


@dataclass
class MeasurementMoments:
    """Predicted measurement mean and variance per (particle, agent)."""

    mean: np.ndarray
    var: np.ndarray

    def __getitem__(self, index):
        return MeasurementMoments(self.mean[index], self.var[index])


@dataclass
class HybridBelief:
    particles: np.ndarray  # (n_p, 2)
    weights: np.ndarray  # (n_p,)
    bank: GaussianBelief  # batch (n_p, n_v)

    @classmethod
    def from_known_agents(cls, particles, agent_states):
        """Uniform weights and exact (zero-covariance) agent beliefs."""
        particles = np.array(particles, dtype=float)
        agents = np.asarray(agent_states, dtype=float)
        n_p, n_v = len(particles), len(agents)
        mean = np.broadcast_to(agents, (n_p, n_v, 3)).copy()
        return cls(particles, np.full(n_p, 1.0 / n_p), GaussianBelief(mean, np.zeros((n_p, n_v, 3, 3))))

    @property
    def n_particles(self) -> int:
        return len(self.particles)

    @property
    def n_agents(self) -> int:
        return self.bank.mean.shape[1]

    def copy(self):
        return HybridBelief(self.particles.copy(), self.weights.copy(), self.bank.copy())


def ekf_predict(belief: GaussianBelief, u, motion: MotionParams) -> GaussianBelief:
    """Propagate through the motion model: ``F S F^T + q_cov``."""
    jac = models.fixedwing_jacobian(belief.mean, u, motion)
    mean = models.fixedwing_step(belief.mean, u, motion)
    cov = jac @ belief.cov @ np.swapaxes(jac, -1, -2) + motion.q_cov
    return GaussianBelief(mean, symmetrize(cov))


def predicted_measurement_moments(prior: GaussianBelief, target, sensor: SensorParams) -> MeasurementMoments:
    h, jac = models.snr_value_and_jacobian(prior.mean, target, sensor)
    var = np.einsum("...i,...ij,...j->...", jac, prior.cov, jac) + sensor.r_var
    return MeasurementMoments(h, var)


def ekf_correct(prior: GaussianBelief, z, target, sensor: SensorParams) -> GaussianBelief:
    """Scalar-measurement EKF update, batched over the prior's leading axes."""
    h, jac = models.snr_value_and_jacobian(prior.mean, target, sensor)
    cov_ht = np.einsum("...ij,...j->...i", prior.cov, jac)
    innov_var = np.einsum("...i,...i->...", jac, cov_ht) + sensor.r_var
    gain = cov_ht / innov_var[..., None]
    mean = prior.mean + gain * (np.asarray(z, dtype=float) - h)[..., None]
    mean[..., 2] = models.wrap_angle(mean[..., 2])
    # (I - K H) S  ==  S - K (S H^T)^T
    cov = prior.cov - gain[..., :, None] * cov_ht[..., None, :]
    return GaussianBelief(mean, symmetrize(cov))


def log_likelihoods(moments: MeasurementMoments, z):
    """Per-particle log of the product of Gaussian measurement likelihoods."""
    resid = np.asarray(z, dtype=float) - moments.mean
    terms = -0.5 * (LOG_2PI + np.log(moments.var) + resid * resid / moments.var)
    return terms.sum(axis=-1)


def weight_update(belief: HybridBelief, moments: MeasurementMoments, z):
    """Reweight particles by the measurement likelihood, in the log domain.

    Raises:
        WeightCollapse: when no particle has a finite likelihood.
    """
    with np.errstate(divide="ignore"):
        logw = np.log(belief.weights) + log_likelihoods(moments, z)
    top = np.max(logw)
    if not np.isfinite(top):
        raise WeightCollapse("weight-collapse: every particle likelihood is zero")
    w = np.exp(logw - top)
    w[~np.isfinite(w)] = 0.0
    return w / w.sum()


def effective_sample_size(weights) -> float:
    weights = np.asarray(weights, dtype=float)
    return float(1.0 / np.dot(weights, weights))


def systematic_indices(weights, offset: float):
    """Indices picked by a comb of ``n`` teeth spaced ``1/n`` from ``offset``."""
    weights = np.asarray(weights, dtype=float)
    n = len(weights)
    cumulative = np.cumsum(weights)
    positions = offset + np.arange(n) / n + _COMB_NUDGE
    idx = np.searchsorted(cumulative, positions, side="right")
    return np.minimum(idx, n - 1)


def low_variance_resample(belief: HybridBelief, offset: float) -> HybridBelief:
    """Systematic resampling with comb offset in ``[0, 1/n_p)``.

    Survivors carry a copy of their whole EKF row; weights become uniform.
    """
    idx = systematic_indices(belief.weights, offset)
    n = belief.n_particles
    return HybridBelief(
        belief.particles[idx],
        np.full(n, 1.0 / n),
        GaussianBelief(belief.bank.mean[idx], belief.bank.cov[idx]),
    )


def target_mmse_estimate(belief: HybridBelief) -> np.ndarray:
    return belief.weights @ belief.particles


def agent_marginal_estimate(belief: HybridBelief, agent: int) -> GaussianBelief:
    """Moment-matched Gaussian of one agent's state, marginalized over particles.

    Headings are averaged as deviations from the heaviest particle's heading
    so the mixture does not straddle the +-pi cut.
    """
    w = belief.weights
    means = belief.bank.mean[:, agent, :].copy()
    ref = means[np.argmax(w), 2]
    means[:, 2] = ref + models.wrap_angle(means[:, 2] - ref)
    mean = w @ means
    dev = means - mean
    cov = np.einsum("k,kij->ij", w, belief.bank.cov[:, agent]) + np.einsum("k,ki,kj->ij", w, dev, dev)
    mean[2] = models.wrap_angle(mean[2])
    return GaussianBelief(mean, symmetrize(cov))
