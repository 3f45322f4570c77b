"""Ground-truth simulation and the plan / move / observe / update loop."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import belief as bf
from . import models
from .errors import ConfigError, PlannerStarved, WeightCollapse
from .models import MotionParams, SensorParams
from .planner import AUTO, SEARCH_MODES, ActionGrid, plan_step

log = logging.getLogger(__name__)

PROPOSED = "proposed"
PF_ONLY = "pf-only"
ALGORITHMS = (PROPOSED, PF_ONLY)

# Stream tags; together with (seed, trial) they key a Philox generator whose
# counter is set from (step, agent), so a draw never depends on earlier draws.
TAG_INIT = 0
TAG_PARTICLES = 1
TAG_MOTION = 2
TAG_MEASUREMENT = 3
TAG_RESAMPLE = 4

STATUS_OK = "ok"
STATUS_COLLAPSE = "weight-collapse"
STATUS_RESEEDED = "reseeded"
STATUS_STARVED = "planner-starved"

SIGMA_X = 0.05
SIGMA_Y = 0.05
SIGMA_PSI = 0.0436


def reference_noise_cov():
    """Reference motion-noise covariance diag(0.05 m, 0.05 m, 0.0436 rad)**2."""
    return np.diag([SIGMA_X**2, SIGMA_Y**2, SIGMA_PSI**2])


class NoiseStreams:
    """Counter-based random draws keyed by (seed, trial, tag, step, agent).

    Every draw handed out is folded into :attr:`checksum` so paired runs
    can prove they consumed identical noise.
    """

    def __init__(self, seed: int, trial: int):
        self.seed = int(seed)
        self.trial = int(trial)
        key = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.trial,)).generate_state(2, np.uint64)
        self._key = key
        self._digest = hashlib.sha256()

    def generator(self, tag: int, step: int = 0, agent: int = 0) -> np.random.Generator:
        counter = np.array([0, agent, step, tag], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._key, counter=counter))

    def _log(self, values):
        values = np.ascontiguousarray(values, dtype=float)
        self._digest.update(values.tobytes())
        return values

    def uniform(self, tag: int, size, step: int = 0):
        return self._log(self.generator(tag, step).random(size))

    def motion(self, step: int, agent: int):
        return self._log(self.generator(TAG_MOTION, step, agent).standard_normal(3))

    def measurement(self, step: int, agent: int) -> float:
        return float(self._log(self.generator(TAG_MEASUREMENT, step, agent).standard_normal(1))[0])

    def resample_offset(self, step: int) -> float:
        return float(self.uniform(TAG_RESAMPLE, 1, step)[0])

    @property
    def checksum(self) -> str:
        return self._digest.hexdigest()


def noise_streams(seed: int, trial: int) -> NoiseStreams:
    return NoiseStreams(seed, trial)


def psd_sqrt(cov):
    """Symmetric square root of a PSD matrix (exactly zero for a zero matrix)."""
    vals, vecs = np.linalg.eigh(np.asarray(cov, dtype=float))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def default_topology(region, n_agents: int = 4):
    """Agents on the midpoints of the region edges, facing its center."""
    xmin, xmax, ymin, ymax = region
    cx, cy = (xmin + xmax) / 2, (ymin + ymax) / 2
    slots = [(cx, ymin, np.pi / 2), (xmax, cy, np.pi), (cx, ymax, -np.pi / 2), (xmin, cy, 0.0)]
    if n_agents > len(slots):
        # evenly spaced on the inscribed ellipse, facing inward
        ang = -np.pi / 2 + 2 * np.pi * np.arange(n_agents) / n_agents
        rx, ry = (xmax - xmin) / 2, (ymax - ymin) / 2
        pts = [(cx + rx * np.cos(a), cy + ry * np.sin(a)) for a in ang]
        return [(float(x), float(y), float(np.arctan2(cy - y, cx - x))) for x, y in pts]
    return slots[:n_agents]


@dataclass
class EpisodeConfig:
    n_agents: int = 4
    region: tuple = (-20.0, 20.0, -20.0, 20.0)
    initial_agents: tuple | None = None
    true_target: tuple | None = None
    true_noise_cov: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    assumed_noise_cov: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    sensor: SensorParams = field(default_factory=SensorParams)
    speed: float = 1.0
    dt: float = 1.0
    g: float = models.GRAVITY
    r_min: float = 3.0
    n_particles: int = 500
    levels: int = 5
    search_mode: str = AUTO
    horizon: int = 100
    seed: int = 0
    trial: int = 0
    algorithm: str = PROPOSED
    on_collapse: str = "halt"

    def __post_init__(self):
        self.region = tuple(float(v) for v in self.region)
        if len(self.region) != 4:
            raise ConfigError("region must be (xmin, xmax, ymin, ymax)")
        xmin, xmax, ymin, ymax = self.region
        if not (xmax > xmin and ymax > ymin):
            raise ConfigError(f"region must have positive extent, got {self.region}")
        self.true_noise_cov = _cov3(self.true_noise_cov, "true_noise_cov")
        self.assumed_noise_cov = _cov3(self.assumed_noise_cov, "assumed_noise_cov")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.algorithm == PF_ONLY:
            self.assumed_noise_cov = np.zeros((3, 3))
        if self.on_collapse not in ("halt", "reseed"):
            raise ConfigError(f"on_collapse must be 'halt' or 'reseed', got {self.on_collapse!r}")
        if self.search_mode not in SEARCH_MODES:
            raise ConfigError(f"search_mode must be one of {SEARCH_MODES}")
        if self.n_agents < 1 or self.n_particles < 1 or self.horizon < 0:
            raise ConfigError("n_agents and n_particles must be >= 1 and horizon >= 0")
        if self.levels < 1 or self.levels % 2 == 0:
            raise ConfigError(f"levels must be a positive odd integer, got {self.levels}")
        if self.initial_agents is not None:
            self.initial_agents = tuple(tuple(float(v) for v in a) for a in self.initial_agents)
            if len(self.initial_agents) != self.n_agents or any(len(a) != 3 for a in self.initial_agents):
                raise ConfigError("initial_agents must list n_agents poses (x, y, psi)")
        if self.true_target is not None:
            self.true_target = tuple(float(v) for v in self.true_target)
            if len(self.true_target) != 2 or not np.all(np.isfinite(self.true_target)):
                raise ConfigError("true_target must be a finite (x, y) pair")

    def agents(self) -> np.ndarray:
        poses = self.initial_agents if self.initial_agents is not None else default_topology(self.region, self.n_agents)
        out = np.array(poses, dtype=float)
        out[:, 2] = models.wrap_angle(out[:, 2])
        return out

    def assumed_motion(self) -> MotionParams:
        return MotionParams.from_turn_radius(self.speed, self.r_min, self.dt, self.g, self.assumed_noise_cov)

    def grid(self) -> ActionGrid:
        return ActionGrid(self.assumed_motion().u_max, self.levels, self.search_mode)

    def with_(self, **changes) -> EpisodeConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["true_noise_cov"] = self.true_noise_cov.tolist()
        out["assumed_noise_cov"] = self.assumed_noise_cov.tolist()
        out["region"] = list(self.region)
        out["initial_agents"] = self.agents().tolist()
        out["true_target"] = None if self.true_target is None else list(self.true_target)
        return out


def _cov3(value, name):
    cov = np.array(value, dtype=float)
    if cov.shape != (3, 3):
        raise ConfigError(f"{name} must be 3x3, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12) or np.linalg.eigvalsh(cov).min() < -1e-12:
        raise ConfigError(f"{name} must be symmetric positive semi-definite")
    return cov


@dataclass
class WorldState:
    true_agents: np.ndarray  # (n_v, 3)
    true_target: np.ndarray  # (2,)
    time_step: int = 0


@dataclass(frozen=True)
class StepRecord:
    time_step: int
    status: str
    action: tuple
    true_agents: tuple  # ((x, y, psi), ...)
    true_target: tuple
    measurements: tuple
    target_estimate: tuple
    agent_estimates: tuple  # marginal means ((x, y, psi), ...)
    target_error: float
    agent_error: float
    n_eff: float
    resampled: bool
    objective: float


def _floats(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return tuple(float(v) for v in a)
    return tuple(_floats(row) for row in a)


def init_episode(cfg: EpisodeConfig, streams: NoiseStreams | None = None):
    """Draw the true target and the uniform particle prior."""
    streams = streams or noise_streams(cfg.seed, cfg.trial)
    xmin, xmax, ymin, ymax = cfg.region
    lo, span = np.array([xmin, ymin]), np.array([xmax - xmin, ymax - ymin])
    drawn = lo + span * streams.uniform(TAG_INIT, 2)
    target = drawn if cfg.true_target is None else np.array(cfg.true_target)
    particles = lo + span * streams.uniform(TAG_PARTICLES, (cfg.n_particles, 2))
    agents = cfg.agents()
    world = WorldState(agents.copy(), target, 0)
    return world, bf.HybridBelief.from_known_agents(particles, agents)


def step_world(world: WorldState, action, motion: MotionParams, noise_cov, streams: NoiseStreams) -> WorldState:
    """Move every agent through the kinematics plus true process noise."""
    banks = np.asarray(action.banks if hasattr(action, "banks") else action, dtype=float)
    step = world.time_step + 1
    root = psd_sqrt(noise_cov)
    nxt = models.fixedwing_step(world.true_agents, banks, motion)
    for i in range(len(nxt)):
        nxt[i] += root @ streams.motion(step, i)
    nxt[:, 2] = models.wrap_angle(nxt[:, 2])
    return WorldState(nxt, world.true_target, step)


def observe(world: WorldState, sensor: SensorParams, streams: NoiseStreams):
    h = models.snr_measure(world.true_agents, world.true_target, sensor)
    noise = np.array([streams.measurement(world.time_step, i) for i in range(len(h))])
    return h + np.sqrt(sensor.r_var) * noise


def agent_position_errors(estimates, truth):
    est, tru = np.asarray(estimates, dtype=float), np.asarray(truth, dtype=float)
    return np.hypot(est[:, 0] - tru[:, 0], est[:, 1] - tru[:, 1])


def _repair_covariances(bank: bf.GaussianBelief) -> int:
    """Clamp negative eigenvalues below -1e-10; returns the repair count."""
    eig = np.linalg.eigvalsh(bank.cov)
    bad = eig.min(axis=-1) < -1e-10
    if not bad.any():
        return 0
    vals, vecs = np.linalg.eigh(bank.cov[bad])
    bank.cov[bad] = (vecs * np.clip(vals, 0.0, None)[..., None, :]) @ np.swapaxes(vecs, -1, -2)
    return int(bad.sum())


@dataclass
class Episode:
    """Everything one episode produced; ``records`` is the run log."""

    config: EpisodeConfig
    records: list
    status: str
    halted_at: int | None
    noise_checksum: str
    psd_repairs: int = 0


def simulate(cfg: EpisodeConfig) -> Episode:
    sensor = cfg.sensor
    motion = cfg.assumed_motion()
    grid = cfg.grid()
    streams = noise_streams(cfg.seed, cfg.trial)
    world, belief = init_episode(cfg, streams)
    records = []
    status, halted_at, repairs = STATUS_OK, None, 0

    for _ in range(cfg.horizon):
        try:
            plan = plan_step(belief, grid, motion, sensor)
        except PlannerStarved:
            status, halted_at = STATUS_STARVED, world.time_step + 1
            log.warning("planner starved at step %d (seed=%d trial=%d)", halted_at, cfg.seed, cfg.trial)
            break
        world = step_world(world, plan.best, motion, cfg.true_noise_cov, streams)
        z = observe(world, sensor, streams)
        step_status = STATUS_OK
        try:
            weights = bf.weight_update(belief, plan.moments, z)
        except WeightCollapse:
            if cfg.on_collapse == "halt":
                step_status = STATUS_COLLAPSE
                weights = belief.weights
            else:
                step_status = STATUS_RESEEDED
                weights = np.full(belief.n_particles, 1.0 / belief.n_particles)
        bank = bf.ekf_correct(plan.prior, z, belief.particles[:, None, :], sensor)
        repairs += _repair_covariances(bank)
        belief = bf.HybridBelief(belief.particles, weights, bank)

        n_eff = bf.effective_sample_size(weights)
        target_est = bf.target_mmse_estimate(belief)
        agent_est = np.array([bf.agent_marginal_estimate(belief, i).mean for i in range(belief.n_agents)])
        # drawn every step so paired runs consume identical noise
        offset = streams.resample_offset(world.time_step) / belief.n_particles
        resampled = step_status == STATUS_OK and n_eff < belief.n_particles / 2
        if resampled:
            belief = bf.low_variance_resample(belief, offset)

        records.append(
            StepRecord(
                time_step=world.time_step,
                status=step_status,
                action=plan.best.banks,
                true_agents=_floats(world.true_agents),
                true_target=_floats(world.true_target),
                measurements=_floats(z),
                target_estimate=_floats(target_est),
                agent_estimates=_floats(agent_est),
                target_error=float(np.hypot(*(target_est - world.true_target))),
                agent_error=float(np.mean(agent_position_errors(agent_est, world.true_agents))),
                n_eff=n_eff,
                resampled=bool(resampled),
                objective=float(plan.objective),
            )
        )
        if step_status == STATUS_COLLAPSE:
            status, halted_at = STATUS_COLLAPSE, world.time_step
            log.warning("weight collapse at step %d (seed=%d trial=%d)", halted_at, cfg.seed, cfg.trial)
            break

    return Episode(cfg, records, status, halted_at, streams.checksum, repairs)


def run_episode(cfg: EpisodeConfig) -> list:
    """Run the plan / move / observe / update loop for ``cfg.horizon`` steps.

    Returns one :class:`StepRecord` per completed step; a halted episode
    ends with the record whose status names the failure.
    """
    return simulate(cfg).records
