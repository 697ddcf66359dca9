import inspect
import math

from hypothesis import given, strategies as st
import numpy as np
import pytest

from appex.aeot import Coupling, coupling_moments
from appex.errors import ExactEstimatorError, RankDeficiencyError
from appex.linalg import is_psd
from appex.mle import (
    mle_diffusion,
    mle_diffusion_exact_1d,
    mle_drift,
    mle_drift_exact_1d,
    trajectory_moments,
)
from appex.sde import InitialDistribution, SdeParams, gen_default_initial, gen_random_sde
from appex.simulate import TrajectorySet, euler_maruyama, subsample_marginals

seeds = st.integers(0, 2**31 - 1)


def _traj(times, paths):
    return TrajectorySet(np.asarray(times, dtype=float), np.asarray(paths, dtype=float))


def _euler_noise_free(A, x0s, dt, n):
    paths = np.empty((len(x0s), n + 1, A.shape[0]))
    paths[:, 0] = x0s
    for k in range(n):
        paths[:, k + 1] = paths[:, k] + paths[:, k] @ A.T * dt
    return _traj(np.arange(n + 1) * dt, paths)


class TestHandValues:
    def test_single_pair(self):
        traj = _traj([0.0, 0.1], [[[1.0], [1.1]]])
        assert mle_drift(traj)[0, 0] == pytest.approx(1.0, rel=1e-12)
        assert mle_diffusion(traj, [[0.0]])[0, 0] == pytest.approx(0.1, rel=1e-12)

    def test_constant_paths(self):
        traj = _traj([0.0, 0.1, 0.2], np.repeat(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])[:, None], 3, axis=1))
        np.testing.assert_array_equal(mle_drift(traj), np.zeros((2, 2)))


class TestExactness:
    @given(seeds, st.integers(1, 4))
    def test_noise_free_euler_recovers_drift(self, seed, d):
        rng = np.random.default_rng(seed)
        A = rng.uniform(-3, 3, (d, d))
        traj = _euler_noise_free(A, rng.normal(size=(d + 2, d)) * 3, 0.01, 20)
        A_hat = mle_drift(traj)
        np.testing.assert_allclose(A_hat, A, rtol=0, atol=1e-10)
        np.testing.assert_allclose(mle_diffusion(traj, A), 0.0, atol=1e-20)
        np.testing.assert_allclose(mle_diffusion(trajectory_moments(traj), A), 0.0, atol=1e-12)

    @given(seeds, st.integers(1, 4))
    def test_drift_bit_invariant_to_diffusion(self, seed, d):
        # The drift estimator has no diffusion argument and keeps no state, so
        # diffusion fits at arbitrary inputs in between cannot move it.
        assert list(inspect.signature(mle_drift).parameters) == ["source"]
        p, _ = gen_random_sde(d, "dense", seed=seed, max_rejections=10_000)
        base = euler_maruyama(p, gen_default_initial(d, seed), 0.01, 20, 30, seed=seed)
        m = trajectory_moments(base)
        A1 = mle_drift(m)
        for scale in (1e-3, 1.0, 1e3):
            mle_diffusion(m, A1 * scale)
        np.testing.assert_array_equal(mle_drift(m), A1)

    def test_exact_1d(self):
        dt = 0.05
        x0 = np.array([[1.0], [-2.0], [3.0]])
        paths = x0[:, None, :] * np.exp(-np.arange(10) * dt)[None, :, None]
        traj = _traj(np.arange(10) * dt, paths)
        assert mle_drift_exact_1d(traj) == pytest.approx(-1.0, rel=1e-12)
        assert mle_diffusion_exact_1d(traj, -1.0) == pytest.approx(0.0, abs=1e-20)
        const = _traj(np.arange(10) * dt, np.ones((2, 10, 1)))
        assert mle_drift_exact_1d(const) == 0.0

    def test_exact_1d_negative_log_argument(self):
        traj = _traj([0.0, 0.1], [[[1.0], [-1.0]], [[2.0], [-2.0]]])
        with pytest.raises(ExactEstimatorError):
            mle_drift_exact_1d(traj)

    def test_rank_deficiency(self):
        traj = _traj([0.0, 0.1, 0.2], np.array([[[1.0, -1.0], [1.1, -1.1], [1.2, -1.2]]]))
        with pytest.raises(RankDeficiencyError):
            mle_drift(traj)


class TestRoutesAndSymmetry:
    @given(seeds, st.integers(1, 3))
    def test_expectation_form_matches_trajectory_form(self, seed, d):
        # Identity couplings over the paths' own snapshots tile the trajectories exactly.
        p, _ = gen_random_sde(d, "dense", seed=seed, max_rejections=10_000)
        traj = euler_maruyama(p, gen_default_initial(d, seed), 0.01, 30, 25, seed=seed)
        M = traj.n_paths
        plan = np.eye(M) / M
        coupling = Coupling(plan, plan.sum(1), plan.sum(0))
        moments = [
            coupling_moments(coupling, traj.paths[:, i], traj.paths[:, i + 1], 0.01)
            for i in range(traj.n_times - 1)
        ]
        A_traj, A_mom = mle_drift(traj), mle_drift(moments)
        np.testing.assert_allclose(A_mom, A_traj, rtol=0, atol=1e-10 * max(1, np.abs(A_traj).max()))
        np.testing.assert_allclose(mle_diffusion(moments, A_traj), mle_diffusion(traj, A_traj), rtol=0, atol=1e-10)

    @given(seeds, st.integers(2, 4))
    def test_orthogonal_equivariance(self, seed, d):
        rng = np.random.default_rng(seed)
        p, _ = gen_random_sde(d, "dense", seed=seed, max_rejections=10_000)
        traj = euler_maruyama(p, gen_default_initial(d, seed), 0.01, 20, 30, seed=seed)
        Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        rotated = _traj(traj.times, traj.paths @ Q.T)
        A, Ar = mle_drift(traj), mle_drift(rotated)
        np.testing.assert_allclose(Ar, Q @ A @ Q.T, rtol=0, atol=1e-9 * max(1, np.abs(A).max()))
        np.testing.assert_allclose(mle_diffusion(rotated, Ar), Q @ mle_diffusion(traj, A) @ Q.T, rtol=0, atol=1e-9)

    @given(seeds, st.integers(1, 4))
    def test_diffusion_psd(self, seed, d):
        rng = np.random.default_rng(seed)
        p, _ = gen_random_sde(d, "dense", seed=seed, max_rejections=10_000)
        traj = euler_maruyama(p, gen_default_initial(d, seed), 0.01, 10, 10, seed=seed)
        H = mle_diffusion(traj, rng.normal(size=(d, d)) * 10)
        assert is_psd(H)
        assert np.trace(H) >= 0


class TestSimulationOracles:
    def test_ou_diffusion(self):
        p = SdeParams([[-1.0]], [[1.0]])
        traj = euler_maruyama(p, InitialDistribution([[1.0], [-1.0]]), 0.01, 99, 500, seed=0)
        H = mle_diffusion(traj, mle_drift(traj))[0, 0]
        assert 0.85 <= H <= 1.15

    def test_example1_fast_exact_drift(self):
        p = SdeParams.from_factor([[-10.0]], [[math.sqrt(10.0)]])
        traj = euler_maruyama(p, InitialDistribution([[1.0]]), 0.01, 100, 500, seed=3)
        obs = subsample_marginals(traj, 0.05, 20, shuffle=False)
        paths = np.stack(obs.samples, axis=1)
        a = mle_drift_exact_1d(_traj(obs.times, paths))
        assert abs(a + 10.0) <= 1.5
