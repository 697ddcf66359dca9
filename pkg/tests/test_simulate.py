import math

from hypothesis import given, strategies as st
import numpy as np
import pytest

from appex.errors import AlignmentError, DimensionError, DivergenceError
from appex.sde import InitialDistribution, SdeParams, gen_default_initial, gen_random_sde
from appex.simulate import MarginalDataset, TrajectorySet, euler_maruyama, subsample_marginals


def _lex_sorted(X):
    return X[np.lexsort(X.T[::-1])]


class TestEulerMaruyama:
    def test_constant_without_drift_or_noise(self):
        p = SdeParams(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))
        traj = euler_maruyama(p, InitialDistribution([[1.5, -2.0]]), 0.01, 10, 5)
        np.testing.assert_array_equal(traj.paths, np.broadcast_to([1.5, -2.0], traj.paths.shape))

    def test_zero_noise_is_forward_euler(self):
        A = np.array([[-1.0, 2.0], [0.5, -3.0]])
        p = SdeParams(A, np.zeros((2, 2)), np.zeros((2, 2)))
        x0 = np.array([2.0, -1.0])
        traj = euler_maruyama(p, InitialDistribution([x0]), 0.01, 50, 3)
        x = x0.copy()
        for k in range(50):
            x = x + x @ (A.T * 0.01)
            # Equal up to BLAS summation order.
            np.testing.assert_allclose(traj.paths[0, k + 1], x, rtol=1e-14, atol=1e-15)

    def test_ou_variance(self):
        p = SdeParams([[-1.0]], [[1.0]])
        traj = euler_maruyama(p, InitialDistribution([[1.0]]), 0.01, 100, 10_000, seed=1)
        expected = (1 - math.exp(-2)) / 2  # Var(X0) = 0
        assert abs(traj.paths[:, -1, 0].var() - expected) <= 0.1 * expected

    def test_rotation_mean(self):
        J = np.array([[0.0, 1.0], [-1.0, 0.0]])
        p = SdeParams(J, np.eye(2))
        n = int(round((math.pi / 2) / 0.001))
        traj = euler_maruyama(p, InitialDistribution([[2.0, 0.0]]), 0.001, n, 10_000, seed=2)
        np.testing.assert_allclose(traj.paths[:, -1].mean(axis=0), [0.0, -2.0], atol=0.1)

    def test_deterministic_and_batch_independent(self):
        p, _ = gen_random_sde(3, "dense", seed=5)
        p0 = gen_default_initial(3, 6)
        a = euler_maruyama(p, p0, 0.01, 20, 40, seed=9)
        b = euler_maruyama(p, p0, 0.01, 20, 40, seed=9)
        c = euler_maruyama(p, p0, 0.01, 20, 10, seed=9)
        np.testing.assert_array_equal(a.paths, b.paths)
        np.testing.assert_array_equal(a.paths[:10], c.paths)

    def test_divergence(self):
        p = SdeParams([[1e4]], [[1.0]])
        with pytest.raises(DivergenceError):
            euler_maruyama(p, InitialDistribution([[1.0]]), 1.0, 200, 2)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            euler_maruyama(SdeParams(np.eye(2), np.eye(2)), InitialDistribution([[1.0]]), 0.01, 5, 2)


class TestSubsample:
    def _traj(self, M=30, seed=0):
        p, _ = gen_random_sde(2, "dense", seed=seed)
        return euler_maruyama(p, gen_default_initial(2, seed), 0.01, 100, M, seed=seed)

    def test_protocol_times(self):
        data = subsample_marginals(self._traj(), 0.05, 20)
        np.testing.assert_allclose(data.times, np.arange(20) * 0.05, atol=1e-12)
        assert data.counts == [30] * 20

    def test_single_snapshot(self):
        traj = self._traj()
        data = subsample_marginals(traj, 0.05, 1, shuffle_seed=3)
        assert len(data) == 1
        np.testing.assert_array_equal(_lex_sorted(data.samples[0]), _lex_sorted(traj.paths[:, 0]))
        with pytest.raises(ValueError, match="N ≥ 2 required"):
            data.uniform_dt()

    @given(st.integers(0, 1000))
    def test_multiset_preserved(self, seed):
        traj = self._traj(M=15, seed=seed % 7)
        data = subsample_marginals(traj, 0.05, 20, shuffle_seed=seed)
        for i, block in enumerate(data.samples):
            np.testing.assert_array_equal(_lex_sorted(block), _lex_sorted(traj.paths[:, 5 * i]))

    def test_shuffle_breaks_identity(self):
        traj = self._traj()
        data = subsample_marginals(traj, 0.05, 20, shuffle_seed=1)
        assert not np.array_equal(data.samples[5], traj.paths[:, 25])

    def test_misaligned(self):
        with pytest.raises(AlignmentError):
            subsample_marginals(self._traj(), 0.015, 5)
        with pytest.raises(AlignmentError):
            subsample_marginals(self._traj(), 0.05, 30)


class TestContainers:
    def test_trajectory_validation(self):
        with pytest.raises(ValueError):
            TrajectorySet(np.array([0.0, 0.0]), np.zeros((2, 2, 1)))
        with pytest.raises(ValueError):
            TrajectorySet(np.array([0.0, 1.0]), np.full((2, 2, 1), np.nan))

    def test_dataset_validation(self):
        with pytest.raises(ValueError):
            MarginalDataset(np.array([0.0, 1.0]), (np.zeros((1, 2)), np.zeros((3, 2))))
        with pytest.raises(DimensionError):
            MarginalDataset(np.array([0.0, 1.0]), (np.zeros((3, 2)), np.zeros((3, 1))))
        data = MarginalDataset(np.array([0.0, 0.1, 0.3]), tuple(np.zeros((2, 1)) for _ in range(3)))
        with pytest.raises(ValueError):
            data.uniform_dt()
