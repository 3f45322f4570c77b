"""One-step mutual-information planning over a discrete bank-angle grid.

The measurement mixture predicted by the belief is replaced by a Gaussian
with the same mean and covariance, which turns the mutual information into
``log|S_hat| - sum_k w_k sum_i log var_ik`` up to a positive affine map.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import models
from .belief import LOG_2PI, GaussianBelief, HybridBelief, MeasurementMoments, ekf_predict
from .errors import MomentDegenerate, PlannerStarved
from .models import MotionParams, SensorParams

EXHAUSTIVE = "exhaustive-joint"
SEQUENTIAL = "sequential-greedy"
AUTO = "auto"
SEARCH_MODES = (EXHAUSTIVE, SEQUENTIAL, AUTO)

# A later candidate must beat the incumbent by this relative margin; ties
# (including round-off ties between mirror-image actions) keep the earlier one.
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class JointAction:
    banks: tuple

    def __post_init__(self):
        object.__setattr__(self, "banks", tuple(float(b) for b in self.banks))

    def as_array(self):
        return np.array(self.banks)


@dataclass(frozen=True)
class ActionGrid:
    """Per-agent bank-angle levels, symmetric about straight flight."""

    u_max: float
    levels: int = 5
    search_mode: str = AUTO

    def __post_init__(self):
        if self.levels < 1 or self.levels % 2 == 0:
            raise ValueError(f"levels must be a positive odd count, got {self.levels}")
        if self.search_mode not in SEARCH_MODES:
            raise ValueError(f"unknown search mode {self.search_mode!r}")

    @property
    def values(self) -> np.ndarray:
        m = self.levels // 2
        half = self.u_max * np.arange(1, m + 1) / m if m else np.empty(0)
        return np.concatenate([-half[::-1], [0.0], half])

    @property
    def zero_index(self) -> int:
        return self.levels // 2

    def mode_for(self, n_agents: int) -> str:
        if self.search_mode != AUTO:
            return self.search_mode
        return EXHAUSTIVE if n_agents <= 3 else SEQUENTIAL


@dataclass
class MixtureMoments:
    mean: np.ndarray  # (n_v,)
    cov: np.ndarray  # (n_v, n_v)


@dataclass
class PlanOutcome:
    best: JointAction
    index: tuple
    objective: float
    prior: GaussianBelief  # batch (n_p, n_v), for the chosen action
    moments: MeasurementMoments  # (n_p, n_v), for the chosen action
    scores: dict = field(default_factory=dict)  # level-index tuple -> objective


def candidate_moments(belief: HybridBelief, action, motion: MotionParams, sensor: SensorParams):
    """Hypothetical EKF priors and measurement moments for one joint action.

    Returns ``(prior, moments)``; the belief is left untouched.
    """
    banks = action.as_array() if isinstance(action, JointAction) else np.asarray(action, dtype=float)
    prior = ekf_predict(belief.bank, banks, motion)
    h, jac, singular = models.snr_linearization(prior.mean, belief.particles[:, None, :], sensor)
    if np.any(singular):
        raise models.JacobianSingular("jacobian-singular: a particle coincides with a predicted agent")
    var = np.einsum("...i,...ij,...j->...", jac, prior.cov, jac) + sensor.r_var
    return prior, MeasurementMoments(h, var)


def mixture_moments(weights, moments: MeasurementMoments) -> MixtureMoments:
    """Mean and covariance of the predicted joint measurement mixture.

    The diagonal is ``sum_k w_k (var_k + mu_k**2) - mu_hat**2``, evaluated in
    the centered form ``sum_k w_k (var_k + (mu_k - mu_hat)**2)`` to avoid
    cancellation.
    """
    w = np.asarray(weights, dtype=float)
    mu = np.atleast_2d(moments.mean)
    mean = w @ mu
    dev = mu - mean
    cov = (dev.T * w) @ dev
    cov = 0.5 * (cov + cov.T)
    cov[np.diag_indices_from(cov)] += w @ np.atleast_2d(moments.var)
    return MixtureMoments(mean, cov)


def _logdet(cov) -> float:
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise MomentDegenerate("moment-degenerate: mixture covariance is not positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def gaussian_entropy(mm: MixtureMoments) -> float:
    """Entropy of the moment-matched Gaussian over all agents' measurements."""
    n = len(mm.mean)
    return 0.5 * (n * (1.0 + LOG_2PI) + _logdet(mm.cov))


def conditional_entropy(weights, moments: MeasurementMoments) -> float:
    """Particle-weighted entropy of the measurements given the target."""
    per_particle = np.sum(0.5 * (1.0 + LOG_2PI + np.log(np.atleast_2d(moments.var))), axis=1)
    return float(np.asarray(weights, dtype=float) @ per_particle)


def mi_objective(weights, moments: MeasurementMoments, mm: MixtureMoments) -> float:
    """Reduced mutual-information objective with constant terms dropped."""
    w = np.asarray(weights, dtype=float)
    return _logdet(mm.cov) - float(w @ np.sum(np.log(np.atleast_2d(moments.var)), axis=1))


class _MomentTable:
    """Per-(level, agent) priors and moments; joint actions gather from it.

    Agents' EKFs evolve independently given a particle, so the moments of a
    joint action are just the columns for each agent's chosen level.
    """

    def __init__(self, belief: HybridBelief, values, motion: MotionParams, sensor: SensorParams):
        bank = belief.bank
        u = np.asarray(values)[:, None, None]
        shape = (len(values),) + bank.batch_shape
        prior = ekf_predict(GaussianBelief(np.broadcast_to(bank.mean, shape + (3,)), bank.cov), u, motion)
        h, jac, singular = models.snr_linearization(prior.mean, belief.particles[:, None, :], sensor)
        self.prior_mean = prior.mean
        self.prior_cov = prior.cov
        self.mean = h
        with np.errstate(invalid="ignore"):
            self.var = np.einsum("...i,...ij,...j->...", jac, prior.cov, jac) + sensor.r_var
        self.poisoned = singular.any(axis=1)  # (levels, n_v)
        self.agents = np.arange(bank.batch_shape[1])

    def gather(self, index):
        lv = np.asarray(index)
        moments = MeasurementMoments(self.mean[lv, :, self.agents].T, self.var[lv, :, self.agents].T)
        prior = GaussianBelief(
            np.swapaxes(self.prior_mean[lv, :, self.agents], 0, 1),
            np.swapaxes(self.prior_cov[lv, :, self.agents], 0, 1),
        )
        return prior, moments

    def score(self, weights, index) -> float:
        if self.poisoned[np.asarray(index), self.agents].any():
            return -np.inf
        _, moments = self.gather(index)
        try:
            return mi_objective(weights, moments, mixture_moments(weights, moments))
        except MomentDegenerate:
            return -np.inf


def _beats(candidate: float, incumbent) -> bool:
    if not np.isfinite(candidate):
        return False
    if incumbent is None:
        return True
    return candidate > incumbent + TIE_RTOL * max(1.0, abs(incumbent))


def plan_step(belief: HybridBelief, grid: ActionGrid, motion: MotionParams, sensor: SensorParams) -> PlanOutcome:
    """Pick the joint bank command maximizing the approximate mutual information.

    Raises:
        PlannerStarved: if every candidate is poisoned or degenerate.
    """
    values = grid.values
    n_v = belief.n_agents
    table = _MomentTable(belief, values, motion, sensor)
    scores = {}
    best_idx, best_obj = None, None

    def consider(index):
        nonlocal best_idx, best_obj
        obj = scores.get(index)
        if obj is None:
            obj = scores[index] = table.score(belief.weights, index)
        if _beats(obj, best_obj):
            best_idx, best_obj = index, obj

    if grid.mode_for(n_v) == EXHAUSTIVE:
        for index in itertools.product(range(grid.levels), repeat=n_v):
            consider(index)
    else:
        chosen = [grid.zero_index] * n_v
        for agent in range(n_v):
            best_idx, best_obj = None, None
            for level in range(grid.levels):
                consider(tuple(chosen[:agent] + [level] + chosen[agent + 1 :]))
            if best_idx is None:
                break
            chosen = list(best_idx)

    if best_idx is None:
        raise PlannerStarved("planner-starved: no candidate action has a finite objective")
    prior, moments = table.gather(best_idx)
    return PlanOutcome(
        best=JointAction(values[list(best_idx)]),
        index=best_idx,
        objective=best_obj,
        prior=prior,
        moments=moments,
        scores=scores,
    )


def baseline_config(motion: MotionParams | None = None) -> MotionParams:
    """Filter configuration of the PF-only baseline: zero assumed motion noise.

    With zero initial covariance this keeps every agent belief a point mass,
    every Kalman gain zero and every predicted measurement variance equal to
    the sensor noise. It is the same code path, not a separate planner.
    """
    motion = MotionParams() if motion is None else motion
    return motion.with_noise(np.zeros((3, 3)))
