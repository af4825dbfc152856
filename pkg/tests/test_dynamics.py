import numpy as np
import pytest

from cpabarrier.dataset import LipschitzInfo
from cpabarrier.dynamics import (
    A_BENCH,
    BENCHMARKS,
    ConstantController,
    benchmark,
    linear_autonomous,
    linear_nonautonomous,
    nonlinear_autonomous,
    save_trajectory,
    simulate,
)
from cpabarrier.exceptions import InputOutOfRange


def power_iteration_norm(A, iters=500):
    """Spectral norm via power iteration on A^T A (independent of numpy's SVD)."""
    v = np.ones(A.shape[1])
    for _ in range(iters):
        v = A.T @ (A @ v)
        v /= np.linalg.norm(v)
    return float(np.sqrt(v @ (A.T @ (A @ v))))


class TestLinearAutonomous:
    @pytest.mark.parametrize("x,expected", [((1, 0), (0.22, -0.5364)), ((0, 0), (0, 0))])
    def test_examples(self, x, expected):
        np.testing.assert_allclose(linear_autonomous().step(np.array(x, float)), expected, atol=1e-15)

    def test_spectral_norm(self):
        L = power_iteration_norm(A_BENCH)
        assert L == pytest.approx(0.5837, abs=1e-4)
        assert linear_autonomous().lipschitz == LipschitzInfo.joint(0.5837)

    def test_converges(self):
        traj = simulate(linear_autonomous(), None, [1.0, 1.0], 50)
        assert traj.shape == (51, 2)
        assert np.linalg.norm(traj[-1]) < 1e-10
        assert np.max(np.abs(np.linalg.eigvals(A_BENCH))) < 1


class TestNonlinear:
    @pytest.mark.parametrize("x,expected", [((1, 1), (-0.2, 1.9)), ((0, 0), (0, 0)), ((1, 0), (0.5, 0))])
    def test_examples(self, x, expected):
        np.testing.assert_allclose(nonlinear_autonomous().step(np.array(x, float)), expected, atol=1e-15)

    def test_vectorized(self):
        X = np.random.default_rng(0).uniform(-1, 1, size=(4, 3, 2))
        out = nonlinear_autonomous().step(X)
        assert out.shape == X.shape
        np.testing.assert_allclose(out[2, 1], nonlinear_autonomous().step(X[2, 1]))


class TestLinearNonautonomous:
    @pytest.mark.parametrize("x,u,expected", [((0, 0), 1.0, (0, 1)), ((1, 0), 0.0, (0.22, -0.5364)),
                                              ((0, 1), -0.5, (0.4013, -0.2891))])
    def test_examples(self, x, u, expected):
        np.testing.assert_allclose(linear_nonautonomous().step(np.array(x, float), [u]), expected, atol=1e-15)

    def test_input_range(self):
        o = linear_nonautonomous()
        o.step(np.zeros(2), [1.0 + 1e-13])
        with pytest.raises(InputOutOfRange):
            o.step(np.zeros(2), [1.0 + 1e-11])
        with pytest.raises(InputOutOfRange):
            o.step(np.zeros(2), None)

    def test_zero_controller_matches_autonomous(self):
        a = simulate(linear_autonomous(), None, [0.7, -0.3], 30)
        b = simulate(linear_nonautonomous(), ConstantController([0.0]), [0.7, -0.3], 30)
        np.testing.assert_array_equal(a, b)


class TestSimulate:
    def test_horizon_zero(self):
        traj = simulate(linear_autonomous(), None, [0.3, 0.1], 0)
        np.testing.assert_array_equal(traj, [[0.3, 0.1]])

    @pytest.mark.parametrize("name", sorted(BENCHMARKS))
    @pytest.mark.parametrize("k1,k2", [(0, 5), (3, 4), (10, 1)])
    def test_composition(self, name, k1, k2):
        o = benchmark(name)
        ctrl = ConstantController([0.25]) if o.m else None
        x0 = np.array([0.2, -0.4])
        first = simulate(o, ctrl, x0, k1)
        second = simulate(o, ctrl, first[-1], k2)
        whole = simulate(o, ctrl, x0, k1 + k2)
        np.testing.assert_array_equal(np.vstack([first, second[1:]]), whole)

    def test_controller_required(self):
        with pytest.raises(ValueError):
            simulate(linear_nonautonomous(), None, [0, 0], 3)

    def test_negative_horizon(self):
        with pytest.raises(ValueError):
            simulate(linear_autonomous(), None, [0, 0], -1)

    def test_unknown_benchmark(self):
        with pytest.raises(ValueError):
            benchmark("nope")

    def test_trajectory_csv(self, tmp_path):
        states, inputs = simulate(linear_nonautonomous(), ConstantController([0.5]), [0.1, 0.1], 3,
                                  return_inputs=True)
        save_trajectory(tmp_path / "t.csv", states, inputs)
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "step,x1,x2,u1"
        assert len(lines) == 5
        assert lines[1].split(",")[3] == "0.5"


class TestLipschitzAudit:
    """Finite-difference audit: 10^5 random pairs per benchmark, zero violations."""

    PAIRS = 100_000

    def _pairs(self, rng, box):
        lo, hi = box[:, 0], box[:, 1]
        return rng.uniform(lo, hi, size=(self.PAIRS, len(lo))), rng.uniform(lo, hi, size=(self.PAIRS, len(lo)))

    def test_linear_autonomous(self):
        o = linear_autonomous()
        rng = np.random.default_rng(1)
        p, q = self._pairs(rng, o.state_box)
        lhs = np.linalg.norm(o.step(p) - o.step(q), axis=1)
        assert np.all(lhs <= 0.5837 * np.linalg.norm(p - q, axis=1))

    def test_nonlinear(self):
        o = nonlinear_autonomous()
        rng = np.random.default_rng(2)
        p, q = self._pairs(rng, np.array([[-1.0, 1.0], [-1.0, 1.0]]))
        lhs = np.linalg.norm(o.step(p) - o.step(q), axis=1)
        assert np.all(lhs <= 4.05 * np.linalg.norm(p - q, axis=1))

    def test_linear_nonautonomous_split(self):
        o = linear_nonautonomous()
        rng = np.random.default_rng(3)
        box = np.vstack([o.state_box, o.input_box])
        p, q = self._pairs(rng, box)
        lhs = np.linalg.norm(o.step(p[:, :2], p[:, 2:]) - o.step(q[:, :2], q[:, 2:]), axis=1)
        rhs = 0.5837 * np.linalg.norm(p[:, :2] - q[:, :2], axis=1) + 1.0 * np.abs(p[:, 2] - q[:, 2])
        assert np.all(lhs <= rhs)
