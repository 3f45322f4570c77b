"""Numerical self-checks run by ``mi-seeker check``.

Each suite compares a package routine against an independent route
(finite differences, sampling, closed-form entropies) and reports the
worst observed margin against its tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from . import belief, models, planner

FD_STEP = 1e-5
FD_RTOL = 1e-5
N_SIGMA = 3.0
IDENTITY_ATOL = 1e-12


@dataclass
class SuiteResult:
    name: str
    passed: bool
    tolerance: str
    margin: str


def central_difference(fn, x, step=FD_STEP):
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def _relative_error(analytic, numeric):
    scale = max(np.max(np.abs(numeric)), 1e-300)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def random_geometry(rng, n, region=20.0, min_range=1.0, max_abs_bearing=np.pi - 0.2):
    """Agent/target pairs away from coincidence and the rear bearing kink."""
    sensor = models.SensorParams()
    out = []
    while len(out) < n:
        state = np.array([*rng.uniform(-region, region, 2), rng.uniform(-np.pi, np.pi)])
        target = rng.uniform(-region, region, 2)
        if np.hypot(*(target - state[:2])) < min_range:
            continue
        if abs(models.bearing(state, target)) > max_abs_bearing:
            continue
        out.append((state, target))
    return sensor, out


def check_jacobians(n=1000, seed=0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    sensor, pairs = random_geometry(rng, n)
    motion = models.MotionParams()
    worst_h = worst_f = 0.0
    for state, target in pairs:
        analytic = models.snr_jacobian(state, target, sensor)
        numeric = central_difference(lambda s: models.snr_measure(s, target, sensor), state)
        worst_h = max(worst_h, _relative_error(analytic, numeric))
        # keep headings clear of the wrap so differencing stays smooth
        st = state.copy()
        st[2] = rng.uniform(-np.pi + 0.5, np.pi - 0.5)
        u = rng.uniform(-motion.u_max, motion.u_max)
        analytic_f = models.fixedwing_jacobian(st, u, motion)
        numeric_f = central_difference(lambda s: models.fixedwing_step(s, u, motion), st)
        worst_f = max(worst_f, _relative_error(analytic_f, numeric_f))
    worst = max(worst_h, worst_f)
    return SuiteResult(
        "jacobian",
        worst < FD_RTOL,
        f"relative error < {FD_RTOL:g} over {n} samples (step {FD_STEP:g})",
        f"worst sensor {worst_h:.3e}, worst motion {worst_f:.3e}",
    )


def random_moments(rng, n_p, n_v):
    weights = rng.dirichlet(np.ones(n_p))
    mean = rng.uniform(0.0, 10.0, (n_p, n_v))
    var = rng.uniform(2.0, 6.0, (n_p, n_v))
    return weights, belief.MeasurementMoments(mean, var)


def sample_mixture(rng, weights, moments, n):
    comp = rng.choice(len(weights), size=n, p=weights)
    return moments.mean[comp] + np.sqrt(moments.var[comp]) * rng.standard_normal((n, moments.mean.shape[1]))


def moment_z_scores(samples, mm):
    """z-scores of the analytic mean and covariance against sample moments."""
    n = len(samples)
    centered = samples - samples.mean(axis=0)
    z = list((samples.mean(axis=0) - mm.mean) / (samples.std(axis=0, ddof=1) / np.sqrt(n)))
    for i in range(samples.shape[1]):
        for j in range(i, samples.shape[1]):
            prod = centered[:, i] * centered[:, j]
            z.append((prod.mean() - mm.cov[i, j]) / (prod.std(ddof=1) / np.sqrt(n)))
    return np.abs(np.array(z))


def check_moments(instances=20, draws=1_000_000, seed=1) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n_p, n_v = int(rng.integers(1, 11)), int(rng.integers(1, 4))
        weights, moments = random_moments(rng, n_p, n_v)
        mm = planner.mixture_moments(weights, moments)
        worst = max(worst, float(moment_z_scores(sample_mixture(rng, weights, moments, draws), mm).max()))
    return SuiteResult(
        "moments",
        worst < N_SIGMA,
        f"|analytic - sample| < {N_SIGMA:g} SE, {instances} instances x {draws} draws",
        f"worst {worst:.2f} SE",
    )


def resampler_z_scores(weights, draws, rng):
    n = len(weights)
    offsets = rng.uniform(0.0, 1.0 / n, draws)
    counts = np.zeros((draws, n))
    for d, offset in enumerate(offsets):
        counts[d] = np.bincount(belief.systematic_indices(weights, offset), minlength=n)
    mean, sd = counts.mean(axis=0), counts.std(axis=0, ddof=1)
    expected = n * np.asarray(weights)
    se = sd / np.sqrt(draws)
    # a zero sample spread means the count is deterministic; it must then be exact
    return np.where(se > 0, np.abs(mean - expected) / np.where(se > 0, se, 1.0), np.abs(mean - expected) * 1e12)


def check_resampler(n=10, draws=100_000, seed=2) -> SuiteResult:
    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(np.ones(n))
    worst = float(resampler_z_scores(weights, draws, rng).max())
    return SuiteResult(
        "resampler",
        worst < N_SIGMA,
        f"E[copies_k] = n_p w_k within {N_SIGMA:g} SE over {draws} draws",
        f"worst {worst:.2f} SE",
    )


def scipy_entropies(weights, moments, mm):
    """Joint Gaussian entropy and particle-weighted conditional entropy via scipy."""
    h_z = stats.multivariate_normal(mean=mm.mean, cov=mm.cov).entropy()
    h_cond = sum(
        w * sum(stats.norm(scale=np.sqrt(v)).entropy() for v in row) for w, row in zip(weights, moments.var)
    )
    return float(h_z), float(h_cond)


def mixture_entropy_mc(weights, moments, rng, draws=200_000):
    """Monte Carlo entropy of the exact Gaussian-mixture measurement density."""
    z = sample_mixture(rng, weights, moments, draws)
    logpdf = -0.5 * (np.log(2 * np.pi * moments.var)[None] + (z[:, None, :] - moments.mean[None]) ** 2 / moments.var[None])
    log_p = logsumexp(logpdf.sum(axis=2) + np.log(weights)[None], axis=1)
    return float(-log_p.mean()), float(log_p.std(ddof=1) / np.sqrt(draws))


def check_objective(instances=100, bound_instances=10, seed=3) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst_gap = 0.0
    for _ in range(instances):
        n_p, n_v = int(rng.integers(1, 11)), int(rng.integers(1, 5))
        weights, moments = random_moments(rng, n_p, n_v)
        mm = planner.mixture_moments(weights, moments)
        h_z, h_cond = scipy_entropies(weights, moments, mm)
        worst_gap = max(worst_gap, abs(planner.mi_objective(weights, moments, mm) - 2 * (h_z - h_cond)))
    worst_z = -np.inf
    for _ in range(bound_instances):
        n_p, n_v = int(rng.integers(1, 6)), int(rng.integers(1, 3))
        weights, moments = random_moments(rng, n_p, n_v)
        h_gauss = planner.gaussian_entropy(planner.mixture_moments(weights, moments))
        h_mc, se = mixture_entropy_mc(weights, moments, rng)
        worst_z = max(worst_z, (h_mc - h_gauss) / se)
    passed = worst_gap <= IDENTITY_ATOL and worst_z < N_SIGMA
    return SuiteResult(
        "objective",
        passed,
        f"|objective - 2(H - H_cond)| <= {IDENTITY_ATOL:g}; Gaussian H >= MC mixture H - {N_SIGMA:g} SE",
        f"worst identity gap {worst_gap:.2e}, worst bound excess {worst_z:.2f} SE",
    )


SUITES = {
    "jacobian": check_jacobians,
    "moments": check_moments,
    "resampler": check_resampler,
    "objective": check_objective,
}


def run_suites(names=None) -> list:
    names = list(SUITES) if not names else names
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s): {', '.join(unknown)}; choose from {', '.join(SUITES)}")
    return [SUITES[n]() for n in names]
