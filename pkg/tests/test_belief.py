import math

import numpy as np
import pytest

from mi_seeker import belief as bf
from mi_seeker import models
from mi_seeker.checks import resampler_z_scores
from mi_seeker.errors import WeightCollapse
from mi_seeker.models import MotionParams, SensorParams
from mi_seeker.planner import ActionGrid, plan_step

SENSOR = SensorParams()
P0 = np.diag([0.05**2, 0.05**2, 0.0436**2])


def motion(q=None):
    return MotionParams.from_turn_radius(q_cov=np.zeros((3, 3)) if q is None else q)


def small_cov(rng, scale=(0.01, 0.01, 0.005)):
    a = rng.normal(size=(3, 3)) * np.asarray(scale)[:, None]
    return a @ a.T


def sample_cov_z(samples, expected):
    """|sample covariance - expected| in standard errors, entrywise."""
    n = len(samples)
    c = samples - samples.mean(axis=0)
    z = []
    for i in range(3):
        for j in range(i, 3):
            prod = c[:, i] * c[:, j]
            z.append(abs(prod.mean() - expected[i, j]) / (prod.std(ddof=1) / math.sqrt(n)))
    return max(z)


def test_ekf_predict_zero_cov_gives_process_noise():
    b = bf.GaussianBelief([1.0, 2.0, 0.3], np.zeros((3, 3)))
    prior = bf.ekf_predict(b, 0.01, motion(P0))
    assert np.array_equal(prior.cov, P0)


def test_ekf_predict_noiseless_is_dead_reckoning():
    b = bf.GaussianBelief([1.0, 2.0, 0.3], np.zeros((3, 3)))
    m = motion()
    prior = bf.ekf_predict(b, m.u_max, m)
    assert np.array_equal(prior.cov, np.zeros((3, 3)))
    assert np.array_equal(prior.mean, models.fixedwing_step(b.mean, m.u_max, m))


def test_ekf_predict_matches_sampling_oracle():
    rng = np.random.default_rng(0)
    for _ in range(3):
        mean = np.array([*rng.uniform(-10, 10, 2), rng.uniform(-2.5, 2.5)])
        cov = small_cov(rng)
        m = motion(P0)
        u = rng.uniform(-m.u_max, m.u_max)
        prior = bf.ekf_predict(bf.GaussianBelief(mean, cov), u, m)
        draws = rng.multivariate_normal(mean, cov, size=1_000_000)
        propagated = models.fixedwing_step(draws, u, m)
        propagated += rng.multivariate_normal(np.zeros(3), P0, size=len(draws))
        assert sample_cov_z(propagated, prior.cov) < 3.0


def test_predicted_measurement_moments_examples():
    prior = bf.GaussianBelief([0.0, 0.0, 0.0], np.zeros((3, 3)))
    mm = bf.predicted_measurement_moments(prior, [10.0, 0.0], SENSOR)
    assert mm.mean == pytest.approx(5.0)
    assert mm.var == 2.0


def test_predicted_measurement_moments_match_sampling_oracle():
    rng = np.random.default_rng(1)
    n = 1_000_000
    for _ in range(3):
        mean = np.array([*rng.uniform(-10, 10, 2), rng.uniform(-3, 3)])
        target = mean[:2] + rng.uniform(3, 8, 2) * rng.choice([-1, 1], 2)
        # point the agent roughly at the target so the bearing term is active but smooth
        mean[2] = math.atan2(*(target - mean[:2])[::-1]) + rng.uniform(-0.5, 0.5)
        # small spread keeps the second-order linearization bias well under one SE
        cov = small_cov(rng, (0.01, 0.01, 0.003))
        mm = bf.predicted_measurement_moments(bf.GaussianBelief(mean, cov), target, SENSOR)
        x = rng.multivariate_normal(mean, cov, size=n)
        z = models.snr_measure(x, target, SENSOR) + math.sqrt(SENSOR.r_var) * rng.standard_normal(n)
        se_mean = z.std(ddof=1) / math.sqrt(n)
        dev = (z - z.mean()) ** 2
        se_var = dev.std(ddof=1) / math.sqrt(n)
        assert abs(z.mean() - mm.mean) < 3 * se_mean
        assert abs(z.var(ddof=1) - mm.var) < 3 * se_var
        assert mm.var >= SENSOR.r_var


def test_ekf_correct_zero_cov_is_identity():
    prior = bf.GaussianBelief([1.0, -2.0, 0.4], np.zeros((3, 3)))
    post = bf.ekf_correct(prior, 123.0, [8.0, 3.0], SENSOR)
    assert np.array_equal(post.mean, prior.mean)
    assert np.array_equal(post.cov, prior.cov)


def test_ekf_correct_zero_innovation_keeps_mean():
    rng = np.random.default_rng(2)
    prior = bf.GaussianBelief([1.0, -2.0, 0.4], small_cov(rng))
    z = models.snr_measure(prior.mean, [8.0, 3.0], SENSOR)
    post = bf.ekf_correct(prior, z, [8.0, 3.0], SENSOR)
    np.testing.assert_array_equal(post.mean, prior.mean)


def test_ekf_correct_scalar_reduction():
    # at (0,0,0) looking at (10,0) the Jacobian is (0.5, 0, 0)
    sx2 = 0.3
    prior = bf.GaussianBelief([0.0, 0.0, 0.0], np.diag([sx2, 0.2, 0.1]))
    post = bf.ekf_correct(prior, 5.7, [10.0, 0.0], SENSOR)
    c, r = 0.5, SENSOR.r_var
    assert post.cov[0, 0] == pytest.approx(sx2 * r / (c * c * sx2 + r), rel=1e-12)
    assert post.mean[0] == pytest.approx(sx2 * c / (c * c * sx2 + r) * (5.7 - 5.0), rel=1e-12)
    assert post.cov[1, 1] == pytest.approx(0.2) and post.cov[2, 2] == pytest.approx(0.1)


def test_ekf_correct_never_increases_trace():
    rng = np.random.default_rng(3)
    for _ in range(200):
        mean = np.array([*rng.uniform(-10, 10, 2), rng.uniform(-3, 3)])
        prior = bf.GaussianBelief(mean, small_cov(rng, (1.0, 1.0, 0.3)))
        target = rng.uniform(-10, 10, 2)
        post = bf.ekf_correct(prior, rng.uniform(0, 10), target, SENSOR)
        assert np.trace(post.cov) <= np.trace(prior.cov) + 1e-10
        assert np.array_equal(post.cov, post.cov.T)
        assert np.linalg.eigvalsh(post.cov).min() >= -1e-10


def _hybrid(n_p, n_v, rng):
    particles = rng.uniform(-10, 10, (n_p, 2))
    agents = np.column_stack([rng.uniform(-20, 20, (n_v, 2)), rng.uniform(-3, 3, n_v)])
    return bf.HybridBelief.from_known_agents(particles, agents)


def test_weight_update_identical_moments_keep_weights():
    rng = np.random.default_rng(4)
    hb = _hybrid(6, 2, rng)
    hb.weights = rng.dirichlet(np.ones(6))
    mm = bf.MeasurementMoments(np.tile([3.0, 4.0], (6, 1)), np.full((6, 2), 2.5))
    np.testing.assert_allclose(bf.weight_update(hb, mm, [2.0, 5.0]), hb.weights, rtol=1e-12)


def test_weight_update_likelihood_ratio():
    hb = _hybrid(2, 1, np.random.default_rng(5))
    z = 4.0
    mm = bf.MeasurementMoments(np.array([[z], [z + 2]]), np.full((2, 1), 2.0))
    w = bf.weight_update(hb, mm, [z])
    assert w[0] / w[1] == pytest.approx(math.e, rel=1e-12)


def test_weight_update_matches_linear_domain():
    rng = np.random.default_rng(6)
    for _ in range(50):
        hb = _hybrid(5, 2, rng)
        hb.weights = rng.dirichlet(np.ones(5))
        mm = bf.MeasurementMoments(rng.uniform(0, 10, (5, 2)), rng.uniform(2, 5, (5, 2)))
        z = rng.uniform(0, 10, 2)
        lin = hb.weights * np.prod(
            np.exp(-((z - mm.mean) ** 2) / (2 * mm.var)) / np.sqrt(2 * math.pi * mm.var), axis=1
        )
        lin /= lin.sum()
        w = bf.weight_update(hb, mm, z)
        np.testing.assert_allclose(w, lin, rtol=1e-9)
        assert abs(w.sum() - 1) < 1e-9 and w.min() >= 0


def test_weight_update_survives_linear_underflow():
    hb = _hybrid(3, 4, np.random.default_rng(7))
    mm = bf.MeasurementMoments(np.array([[0.0] * 4, [40.0] * 4, [41.0] * 4]), np.full((3, 4), 2.0))
    w = bf.weight_update(hb, mm, [40.0] * 4)
    assert np.isfinite(w).all() and w[1] > w[2] > w[0] >= 0


def test_weight_collapse():
    hb = _hybrid(3, 1, np.random.default_rng(8))
    mm = bf.MeasurementMoments(np.zeros((3, 1)), np.full((3, 1), 2.0))
    with pytest.raises(WeightCollapse, match="weight-collapse"):
        bf.weight_update(hb, mm, [np.nan])


def test_effective_sample_size():
    assert bf.effective_sample_size(np.full(8, 1 / 8)) == pytest.approx(8)
    assert bf.effective_sample_size([0, 1, 0]) == 1
    assert bf.effective_sample_size([0.5, 0.25, 0.25]) == pytest.approx(8 / 3)


def test_resample_uniform_zero_offset_is_identity():
    for n in (3, 7, 10, 500):
        idx = bf.systematic_indices(np.full(n, 1.0 / n), 0.0)
        np.testing.assert_array_equal(idx, np.arange(n))


def test_resample_one_hot_copies_row():
    rng = np.random.default_rng(9)
    hb = _hybrid(5, 2, rng)
    hb.bank.cov[:] = rng.uniform(0, 1, hb.bank.cov.shape)
    hb.weights = np.eye(5)[3]
    out = bf.low_variance_resample(hb, 0.1)
    assert np.all(out.particles == hb.particles[3])
    assert np.all(out.bank.mean == hb.bank.mean[3])
    assert np.all(out.bank.cov == hb.bank.cov[3])
    np.testing.assert_array_equal(out.weights, np.full(5, 0.2))
    # deep copies, not views
    out.bank.cov[0, 0, 0, 0] = -1.0
    assert hb.bank.cov[3, 0, 0, 0] != -1.0 and out.bank.cov[1, 0, 0, 0] != -1.0


def test_resample_preserves_count_and_shapes():
    rng = np.random.default_rng(10)
    hb = _hybrid(50, 3, rng)
    hb.weights = rng.dirichlet(np.ones(50) * 0.3)
    out = bf.low_variance_resample(hb, rng.uniform(0, 1 / 50))
    assert out.particles.shape == hb.particles.shape
    assert out.bank.mean.shape == hb.bank.mean.shape and out.bank.cov.shape == hb.bank.cov.shape
    assert set(map(tuple, out.particles)) <= set(map(tuple, hb.particles))


def test_resampler_unbiased():
    rng = np.random.default_rng(11)
    weights = rng.dirichlet(np.ones(10))
    assert resampler_z_scores(weights, 100_000, rng).max() < 3.0


def test_target_mmse_estimate():
    hb = bf.HybridBelief.from_known_agents([[0.0, 0.0], [2.0, 0.0]], [[0, 0, 0]])
    np.testing.assert_allclose(bf.target_mmse_estimate(hb), [1.0, 0.0])
    single = bf.HybridBelief.from_known_agents([[3.0, -1.0]], [[0, 0, 0]])
    np.testing.assert_array_equal(bf.target_mmse_estimate(single), [3.0, -1.0])
    rng = np.random.default_rng(12)
    pts = rng.uniform(-5, 5, (20, 2))
    np.testing.assert_allclose(bf.target_mmse_estimate(bf.HybridBelief.from_known_agents(pts, [[0, 0, 0]])), pts.mean(0))


def test_agent_marginal_identical_rows():
    hb = _hybrid(4, 2, np.random.default_rng(13))
    hb.bank.cov[:] = np.diag([0.2, 0.3, 0.01])
    g = bf.agent_marginal_estimate(hb, 1)
    np.testing.assert_allclose(g.mean, hb.bank.mean[0, 1])
    np.testing.assert_allclose(g.cov, np.diag([0.2, 0.3, 0.01]), atol=1e-15)


def test_agent_marginal_two_components():
    hb = bf.HybridBelief.from_known_agents([[0, 0], [1, 1]], [[0.0, 0.0, 0.1]])
    hb.bank.mean[1, 0, 0] = 3.0
    hb.bank.cov[:] = np.eye(3) * 0.5
    g = bf.agent_marginal_estimate(hb, 0)
    assert g.cov[0, 0] == pytest.approx(0.5 + 9 / 4)
    assert g.mean[0] == pytest.approx(1.5)


def test_agent_marginal_matches_hierarchical_sampling():
    rng = np.random.default_rng(14)
    n_p = 6
    hb = _hybrid(n_p, 1, rng)
    hb.weights = rng.dirichlet(np.ones(n_p))
    hb.bank.mean[:, 0] += np.column_stack([rng.normal(0, 1, (n_p, 2)), rng.normal(0, 0.2, n_p)])
    for k in range(n_p):
        hb.bank.cov[k, 0] = small_cov(rng, (0.5, 0.5, 0.1))
    g = bf.agent_marginal_estimate(hb, 0)
    n = 1_000_000
    comp = rng.choice(n_p, size=n, p=hb.weights)
    chol = np.linalg.cholesky(hb.bank.cov[:, 0] + 1e-15 * np.eye(3))
    x = hb.bank.mean[comp, 0] + np.einsum("nij,nj->ni", chol[comp], rng.standard_normal((n, 3)))
    se = x.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(x.mean(axis=0) - g.mean) < 3 * se)
    assert sample_cov_z(x, g.cov) < 3.0


def test_zero_noise_keeps_every_covariance_and_gain_exactly_zero():
    rng = np.random.default_rng(15)
    m = motion()
    hb = bf.HybridBelief.from_known_agents(
        rng.uniform(-20, 20, (40, 2)), [[0, -20, math.pi / 2], [20, 0, math.pi], [0, 20, -math.pi / 2]]
    )
    grid = ActionGrid(m.u_max, 3)
    for _ in range(25):
        plan = plan_step(hb, grid, m, SENSOR)
        assert np.array_equal(plan.prior.cov, np.zeros_like(plan.prior.cov))
        assert np.all(plan.moments.var == SENSOR.r_var)
        z = rng.uniform(0, 10, 3)
        post = bf.ekf_correct(plan.prior, z, hb.particles[:, None, :], SENSOR)
        assert np.array_equal(post.cov, np.zeros_like(post.cov))
        assert np.array_equal(post.mean, plan.prior.mean)  # zero gain
        hb = bf.HybridBelief(hb.particles, bf.weight_update(hb, plan.moments, z), post)
        if bf.effective_sample_size(hb.weights) < hb.n_particles / 2:
            hb = bf.low_variance_resample(hb, rng.uniform(0, 1 / hb.n_particles))
        assert abs(hb.weights.sum() - 1) < 1e-9
