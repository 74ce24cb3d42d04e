import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cacc.envs import ENV_NAMES, make_benchmark, sample_beta


class TestRegistry:
    @pytest.mark.parametrize("name", ENV_NAMES)
    def test_roundtrip(self, name):
        b = make_benchmark(name)
        assert b.spec.name == name
        assert b.spec.control_low.shape == (b.spec.control_dim,)
        assert b.spec.x0.shape == (b.spec.state_dim,)

    def test_unknown(self):
        with pytest.raises(ValueError):
            make_benchmark("cartpole")


class TestDynamicsValues:
    """One-step regressions against hand-derived values."""

    def test_vanderpol_unit_state(self):
        b = make_benchmark("vanderpol")
        x1 = b.dynamics(np.array([[1.0, 1.0]]), np.zeros((1, 2)), b.nominal_params())[0]
        assert abs(x1[0] - 0.98) <= 1e-12
        assert abs(x1[1] - 0.929) <= 1e-12

    def test_vanderpol_origin_fixed_point(self):
        b = make_benchmark("vanderpol")
        x1 = b.dynamics(np.zeros((1, 2)), np.zeros((1, 2)), b.nominal_params())[0]
        assert np.all(np.abs(x1) <= 1e-12)

    def test_vanderpol_disturbance_enters_linearly(self):
        b = make_benchmark("vanderpol")
        x1 = b.dynamics(np.zeros((1, 2)), np.zeros((1, 2)), {"p": 3.0, "q": -2.0})[0]
        assert abs(x1[0] - 0.03) <= 1e-12
        assert abs(x1[1] + 0.02) <= 1e-12

    def test_pendulum_step(self):
        b = make_benchmark("pendulum")
        x1 = b.dynamics(
            np.array([[1.0, 0.5]]), np.array([[2.0]]), b.nominal_params()
        )[0]
        td = 1.0 + 0.05 * (15.0 * math.sin(0.5) + 3.0 * 2.0)
        assert abs(x1[0] - td) <= 1e-12
        # the angle integrates the updated velocity, not the stale one
        assert abs(x1[1] - (0.5 + 0.05 * td)) <= 1e-12

    def test_pendulum_origin_fixed_point(self):
        b = make_benchmark("pendulum")
        x1 = b.dynamics(np.zeros((1, 2)), np.zeros((1, 1)), b.nominal_params())[0]
        assert np.all(np.abs(x1) <= 1e-12)

    def test_mountaincar_step(self):
        b = make_benchmark("mountaincar")
        x1 = b.dynamics(
            np.array([[0.01, -0.2]]), np.array([[100.0]]), b.nominal_params()
        )[0]
        v = 0.01 + 0.0015 * 100.0 - 0.0025 * math.cos(-0.6)
        assert abs(x1[0] - v) <= 1e-12
        assert abs(x1[1] - (-0.2 + v)) <= 1e-12

    def test_mountaincar_hill_fixed_point(self):
        # zero velocity where cos(3 p) vanishes stays put without control
        b = make_benchmark("mountaincar")
        x = np.array([[0.0, -math.pi / 6.0]])
        x1 = b.dynamics(x, np.zeros((1, 1)), b.nominal_params())[0]
        assert np.all(np.abs(x1 - x[0]) <= 1e-12)

    def test_lorenz_origin_fixed_point(self):
        b = make_benchmark("lorenz")
        x1 = b.dynamics(np.zeros((1, 6)), np.zeros((1, 6)), b.nominal_params())[0]
        assert np.all(np.abs(x1) <= 1e-12)

    def test_lorenz_step_matches_componentwise_recursion(self):
        b = make_benchmark("lorenz")
        rng = np.random.default_rng(7)
        x = rng.uniform(-1, 1, 6)
        u = rng.uniform(-10, 10, 6)
        got = b.dynamics(x[None, :], u[None, :], {"p": 1.5})[0]
        for i in range(6):
            adv = (x[(i + 1) % 6] - x[(i + 4) % 6]) * x[(i + 5) % 6]
            drive = u[i] + (1.5 if i == 0 else 0.0)
            want = x[i] + 0.01 * (adv - x[i] + drive)
            assert abs(got[i] - want) <= 1e-12

    def test_lorenz_offset_enters_first_component_only(self):
        b = make_benchmark("lorenz")
        x = np.ones((1, 6))
        a = b.dynamics(x, np.zeros((1, 6)), {"p": 0.0})[0]
        c = b.dynamics(x, np.zeros((1, 6)), {"p": 2.0})[0]
        assert abs((c - a)[0] - 0.02) <= 1e-12
        assert np.all(np.abs((c - a)[1:]) <= 1e-12)


class TestAssuranceAndCost:
    def test_vanderpol_h(self):
        b = make_benchmark("vanderpol")
        assert b.h_scalar(np.array([0.6, 0.8])) == pytest.approx(0.0, abs=1e-12)
        assert b.h_scalar(np.zeros(2)) == pytest.approx(1.0)

    def test_pendulum_h(self):
        b = make_benchmark("pendulum")
        assert b.h_scalar(np.array([6.0, 0.0])) == pytest.approx(0.0, abs=1e-12)
        assert b.h_scalar(np.array([0.0, 1.5 * math.pi])) == pytest.approx(0.0, abs=1e-12)

    def test_mountaincar_h(self):
        b = make_benchmark("mountaincar")
        assert b.h_scalar(np.array([0.05, -0.3])) == pytest.approx(0.0, abs=1e-12)
        assert b.h_scalar(np.array([0.0, 0.4])) == pytest.approx(0.0, abs=1e-12)

    def test_lorenz_h(self):
        b = make_benchmark("lorenz")
        assert b.h_scalar(np.ones(6) / math.sqrt(6.0)) == pytest.approx(0.0, abs=1e-12)

    def test_rho_zero_inside(self):
        for name in ENV_NAMES:
            b = make_benchmark(name)
            assert b.rho(b.spec.x0) == 0.0

    def test_rho_normalization_and_cap(self):
        b = make_benchmark("vanderpol")
        x = np.array([1.2, 0.0])  # h = 1 - 1.44 = -0.44
        assert b.rho(x) == pytest.approx(0.44)
        assert b.rho(np.array([3.0, 0.0])) == 1.0  # caps at 1

    def test_rho_lorenz_uses_wider_scale(self):
        b = make_benchmark("lorenz")
        x = np.zeros(6)
        x[0] = 2.0  # h = -3
        assert b.rho(x) == pytest.approx(3.0 / 11.0)

    def test_task_costs(self):
        b = make_benchmark("vanderpol")
        c = b.task_cost_scalar(np.array([0.8, 0.8]), np.zeros(2))
        assert c == pytest.approx(0.0, abs=1e-12)
        b = make_benchmark("pendulum")
        assert b.task_cost_scalar(np.array([2.0, 0.0]), np.zeros(1)) == pytest.approx(-4.0)
        b = make_benchmark("lorenz")
        x = np.zeros(6)
        x[0] = 1.5
        assert b.task_cost_scalar(x, np.zeros(6)) == pytest.approx(1.5)

    def test_control_regularizer(self):
        b = make_benchmark("pendulum")
        base = b.task_cost_scalar(np.zeros(2), np.zeros(1))
        with_u = b.task_cost_scalar(np.zeros(2), np.array([10.0]))
        assert with_u - base == pytest.approx(1e-4 * 100.0)


class TestEpisodeMechanics:
    def test_step_advances_and_is_deterministic(self):
        b = make_benchmark("pendulum")
        s1 = b.step(b.create(3), np.array([1.0]))
        s2 = b.step(b.create(3), np.array([1.0]))
        assert s1.k == 1
        assert np.array_equal(s1.x, s2.x)
        assert s1.params == s2.params

    def test_seeds_differ(self):
        b = make_benchmark("vanderpol")
        assert b.create(0).params != b.create(1).params

    def test_control_clamp_flag(self):
        b = make_benchmark("pendulum")
        s = b.step(b.create(0), np.array([500.0]))
        assert s.clamped_control
        s = b.step(b.create(0), np.array([5.0]))
        assert not s.clamped_control

    def test_param_resample_period(self):
        b = make_benchmark("vanderpol")
        s = b.create(11)
        seen = [s.params]
        for _ in range(10):
            s = b.step(s, np.zeros(2))
            seen.append(s.params)
        # constant for steps 1..9, fresh draw exactly at step 10
        assert all(p == seen[0] for p in seen[:10])
        assert seen[10] != seen[0]

    def test_pendulum_offset_drifts(self):
        b = make_benchmark("pendulum")
        s = b.create(2)
        assert s.params["q"] == 0.0
        for _ in range(50):
            s = b.step(s, np.zeros(1))
        assert s.params["q"] == pytest.approx(0.01)
        for _ in range(50):
            s = b.step(s, np.zeros(1))
        assert s.params["q"] == pytest.approx(0.02)

    def test_mountaincar_power_decay(self):
        b = make_benchmark("mountaincar")
        s = b.create(2)
        for _ in range(10):
            s = b.step(s, np.zeros(1))
        assert s.params["m"] == pytest.approx(-1e-7)

    def test_exit_flag_sticky(self):
        b = make_benchmark("vanderpol")
        s = b.create(0)
        s.x = np.array([1.4, 1.4])  # outside the modeled box
        s = b.step(s, np.zeros(2))
        assert s.exited_state_space
        s.x = np.zeros(2)
        s = b.step(s, np.zeros(2))
        assert s.exited_state_space  # flag latches


class TestBetaSampler:
    def test_range_and_determinism(self):
        rng = np.random.default_rng(0)
        draws = [sample_beta(0.1, 0.1, rng) for _ in range(100)]
        assert all(0.0 <= d <= 1.0 for d in draws)
        rng2 = np.random.default_rng(0)
        assert draws[0] == sample_beta(0.1, 0.1, rng2)

    def test_bimodal_concentration(self):
        rng = np.random.default_rng(1)
        draws = np.array([sample_beta(0.1, 0.1, rng) for _ in range(2000)])
        # Beta(0.1, 0.1) mass piles up near the endpoints
        assert np.mean((draws < 0.1) | (draws > 0.9)) > 0.7

    def test_invalid_shapes(self):
        with pytest.raises(ValueError):
            sample_beta(0.0, 0.1, np.random.default_rng(0))

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_always_in_unit_interval(self, seed):
        assert 0.0 <= sample_beta(0.1, 0.1, np.random.default_rng(seed)) <= 1.0


@given(
    name=st.sampled_from(ENV_NAMES),
    seed=st.integers(0, 1000),
    scale=st.floats(0.0, 1.0),
)
@settings(max_examples=60, deadline=None)
def test_short_rollouts_stay_finite(name, seed, scale):
    b = make_benchmark(name)
    s = b.create(seed)
    u = scale * b.spec.control_high * 0.1
    for _ in range(20):
        s = b.step(s, u)
    assert np.all(np.isfinite(s.x))
