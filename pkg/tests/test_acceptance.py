"""Acceptance gate: one test per release criterion.

Each test prints a single summary line; heavy episode grids are computed once
in session fixtures and shared between the criteria that read them.
"""

import itertools
import math
import time

import numpy as np
import pytest

from cacc.calibration import CalibrationWindow, ThresholdParams, empirical_quantile
from cacc.envs import ENV_NAMES, make_benchmark, sample_beta
from cacc.harness import (
    EpisodeConfig,
    regret_curve,
    run_episode,
)

BETA = {"vanderpol": 50.0, "pendulum": 100.0, "mountaincar": 100.0, "lorenz": 100.0}
GAMMA = 0.01


def episode(env, method, alpha, seed, steps):
    return run_episode(EpisodeConfig(
        env=env, method=method, alpha=alpha, beta=BETA[env],
        gamma=GAMMA, steps=steps, seed=seed,
    ))


@pytest.fixture(scope="session")
def identity_grid():
    """4 envs x {cost_aware, standard_aci} x alpha {0.1, 0.3} x seeds 0-2, T=2000."""
    t0 = time.time()
    traces = {}
    for env, method, alpha, seed in itertools.product(
        ENV_NAMES, ("cost_aware", "standard_aci"), (0.1, 0.3), (0, 1, 2)
    ):
        traces[(env, method, alpha, seed)] = episode(env, method, alpha, seed, 2000)
    return traces, time.time() - t0


@pytest.fixture(scope="session")
def mountaincar_grid():
    """MountainCar summaries: methods x alpha {0.1, 0.3, 0.5} x seeds 0-9, T=10000."""
    t0 = time.time()
    summaries = {}
    for method, alpha, seed in itertools.product(
        ("cost_aware", "standard_aci"), (0.1, 0.3, 0.5), range(10)
    ):
        summaries[(method, alpha, seed)] = episode(
            "mountaincar", method, alpha, seed, 10000
        ).summary
    return summaries, time.time() - t0


@pytest.fixture(scope="session")
def baseline_grid():
    """Summaries for all four policies x 4 envs x seeds 0-4, T=5000."""
    summaries = {}
    for env, method, seed in itertools.product(
        ENV_NAMES, ("none", "standard_aci", "conformal_pid", "cost_aware"), range(5)
    ):
        summaries[(env, method, seed)] = episode(env, method, 0.1, seed, 5000).summary
    return summaries


def _params(trace):
    return trace.config.threshold_params(make_benchmark(trace.config.env).spec.m_h)


def test_criterion_1_exact_identity_suite(identity_grid):
    traces, elapsed = identity_grid
    worst_ident = 0.0
    worst_bound = -np.inf
    for key, t in traces.items():
        p = _params(t)
        ident = abs(
            t.deltas_full[-1] - t.deltas_full[0]
            - p.gamma * float(np.sum(p.alpha - t.loss))
        )
        assert ident <= 1e-9, (key, ident)
        lo, hi = p.delta_interval()
        bound = float(max(np.max(lo - t.deltas_full), np.max(t.deltas_full - hi)))
        assert bound <= 0.0, (key, bound)
        worst_ident = max(worst_ident, ident)
        worst_bound = max(worst_bound, bound)
    assert elapsed < 300.0, f"identity grid took {elapsed:.0f}s (target 300s)"
    print(f"criterion 1 PASS: 48 episodes, worst identity residual "
          f"{worst_ident:.2e}, worst interval slack {worst_bound:.2e}, {elapsed:.0f}s")


def test_criterion_2_finite_time_bounds(identity_grid):
    traces, _ = identity_grid
    worst_v = -np.inf
    worst_j = -np.inf
    for key, t in traces.items():
        p = _params(t)
        transient = (t.deltas_full[0] - t.deltas_full[-1]) / (t.T * p.gamma)
        v_T = float(np.mean(t.h < 0.0))
        v_slack = v_T - (p.alpha + transient)
        assert v_slack <= 1e-12, (key, v_slack)
        worst_v = max(worst_v, v_slack)
        if p.beta > 0.0:
            j_T = float(np.mean(t.cost))
            j_slack = j_T - (p.alpha / p.beta + transient / p.beta)
            assert j_slack <= 1e-12, (key, j_slack)
            worst_j = max(worst_j, j_slack)
    print(f"criterion 2 PASS: V and J bounds on 48 episodes, worst slack "
          f"V {worst_v:.2e}, J {worst_j:.2e}")


def test_criterion_3_trend_reproduction(mountaincar_grid):
    summaries, elapsed = mountaincar_grid

    def seed_mean(method, alpha, metric):
        return float(np.mean([
            summaries[(method, alpha, s)][metric] for s in range(10)
        ]))

    lines = []
    v_ours_seq, j_ours_seq = [], []
    for alpha in (0.1, 0.3, 0.5):
        v_ours = seed_mean("cost_aware", alpha, "V_T")
        v_aci = seed_mean("standard_aci", alpha, "V_T")
        j_ours = seed_mean("cost_aware", alpha, "J_T")
        j_aci = seed_mean("standard_aci", alpha, "J_T")
        assert v_ours < v_aci, (alpha, v_ours, v_aci)
        assert j_ours < j_aci, (alpha, j_ours, j_aci)
        assert v_ours <= alpha, (alpha, v_ours)
        v_ours_seq.append(v_ours)
        j_ours_seq.append(j_ours)
        lines.append(f"a={alpha}: V {v_ours:.4f}<{v_aci:.4f} J {j_ours:.5f}<{j_aci:.5f}")
    assert v_ours_seq == sorted(v_ours_seq), v_ours_seq
    assert j_ours_seq == sorted(j_ours_seq), j_ours_seq
    assert elapsed < 1800.0, f"mountaincar grid took {elapsed:.0f}s (target 1800s)"
    print(f"criterion 3 PASS: {'; '.join(lines)}; {elapsed:.0f}s")


def test_criterion_4_quantile_oracle_equivalence():
    p = ThresholdParams(alpha=0.1, beta=0.0, gamma=GAMMA, big_m=2.0, epsilon=1e-3)
    grid = (0.0, 0.25, 0.5, 0.75, 1.0)
    deltas = [round(0.1 * i, 1) for i in range(11)]

    def oracle(scores, delta):
        if delta < 0:
            return p.big_m
        if delta > 1:
            return -p.epsilon
        pool = sorted(scores) if scores else [-p.epsilon, p.big_m]
        n = len(pool)
        for c in pool:
            if sum(1 for r in pool if r <= c) / n >= 1 - delta:
                return c
        return pool[-1]

    checked = 0
    # order inside the window cannot matter, so multisets cover all windows
    for size in range(1, 9):
        for combo in itertools.combinations_with_replacement(grid, size):
            w = CalibrationWindow(8, combo)
            for d in deltas:
                assert empirical_quantile(w, d, p) == oracle(list(combo), d), (combo, d)
                checked += 1
    # permutation invariance backing the multiset reduction above
    rng = np.random.default_rng(0)
    for _ in range(500):
        combo = list(rng.choice(grid, size=rng.integers(1, 9)))
        d = float(rng.choice(deltas))
        base = empirical_quantile(CalibrationWindow(8, combo), d, p)
        rng.shuffle(combo)
        assert empirical_quantile(CalibrationWindow(8, combo), d, p) == base
    # out-of-range level branches
    w = CalibrationWindow(8, [0.25, 0.5])
    assert empirical_quantile(w, -0.2, p) == p.big_m == oracle([0.25, 0.5], -0.2)
    assert empirical_quantile(w, 1.2, p) == -p.epsilon == oracle([0.25, 0.5], 1.2)
    print(f"criterion 4 PASS: {checked} window/level oracle comparisons identical")


def test_criterion_5_dynamics_regressions():
    b = make_benchmark("vanderpol")
    x1 = b.dynamics(np.array([[1.0, 1.0]]), np.zeros((1, 2)), b.nominal_params())[0]
    assert abs(x1[0] - 0.98) <= 1e-12 and abs(x1[1] - 0.929) <= 1e-12
    for name in ("vanderpol", "pendulum", "lorenz"):
        bench = make_benchmark(name)
        x0 = np.zeros((1, bench.spec.state_dim))
        u0 = np.zeros((1, bench.spec.control_dim))
        x1 = bench.dynamics(x0, u0, bench.nominal_params())[0]
        assert np.all(np.abs(x1) <= 1e-12), name
    # the hill benchmark rests where the gravity term vanishes
    b = make_benchmark("mountaincar")
    x = np.array([[0.0, -math.pi / 6.0]])
    x1 = b.dynamics(x, np.zeros((1, 1)), b.nominal_params())[0]
    assert np.all(np.abs(x1 - x[0]) <= 1e-12)
    print("criterion 5 PASS: one-step values and nominal fixed points match to 1e-12")


def test_criterion_6_regret_on_adversarial_streams():
    T = 100_000
    alpha = 0.1
    worst_max = -np.inf
    worst_final = -np.inf
    for beta in (0.0, 50.0):
        l_max = 1.0 + beta
        params = ThresholdParams(alpha=alpha, beta=beta, gamma=GAMMA, big_m=2.0)
        for seed in range(5):
            rng = np.random.default_rng(seed)
            # alternate 0 / L_max in blocks of random length 1..10
            losses = np.empty(T)
            i, high = 0, bool(rng.integers(0, 2))
            while i < T:
                n = int(rng.integers(1, 11))
                losses[i:i + n] = l_max if high else 0.0
                i += n
                high = not high
            deltas = alpha + GAMMA * np.concatenate(
                [[0.0], np.cumsum(alpha - losses[:-1])]
            )
            out = regret_curve(losses, deltas, params)
            worst_max = max(worst_max, out["max_normalized"])
            worst_final = max(worst_final, out["final"] / T)
    assert worst_max <= 10.0, worst_max
    assert worst_final <= 1e-2, worst_final
    print(f"criterion 6 PASS: max Regret/sqrt(T) = {worst_max:.3f} <= 10, "
          f"Regret_T/T = {worst_final:.3e} <= 1e-2")


def test_criterion_7_conservation_law(identity_grid):
    traces, _ = identity_grid
    worst = 0.0
    n_checked = 0
    for key, t in traces.items():
        sum_e = float(np.sum(t.e))
        if sum_e == 0.0:
            continue
        p = _params(t)
        alpha_hat = sum_e / t.T
        c_bar = float(np.sum(t.e * t.cost)) / sum_e
        transient = (t.deltas_full[0] - t.deltas_full[-1]) / (t.T * p.gamma)
        resid = abs(alpha_hat * (1.0 + p.beta * c_bar) - p.alpha - transient)
        assert resid <= 1e-9, (key, resid)
        worst = max(worst, resid)
        n_checked += 1
    assert n_checked > 0
    print(f"criterion 7 PASS: conservation residual <= {worst:.2e} "
          f"on {n_checked} episodes with events")


def test_criterion_8_baseline_separation(baseline_grid):
    summaries = baseline_grid
    lines = []
    for env in ENV_NAMES:
        means = {
            method: float(np.mean([
                summaries[(env, method, s)]["V_T"] for s in range(5)
            ]))
            for method in ("none", "standard_aci", "conformal_pid", "cost_aware")
        }
        for method in ("standard_aci", "conformal_pid", "cost_aware"):
            assert means["none"] > means[method], (env, method, means)
        lines.append(f"{env}: none {means['none']:.4f} > max(variants) "
                     f"{max(means[m] for m in means if m != 'none'):.4f}")
    print(f"criterion 8 PASS: {'; '.join(lines)}")


def test_criterion_9_beta_sampler_moments():
    rng = np.random.default_rng(0)
    draws = np.array([sample_beta(0.1, 0.1, rng) for _ in range(100_000)])
    mean = float(draws.mean())
    var = float(draws.var())
    assert abs(mean - 0.5) <= 0.01, mean
    assert abs(var - 0.2083) <= 0.01, var
    print(f"criterion 9 PASS: mean {mean:.4f} (0.5 +/- 0.01), "
          f"variance {var:.4f} (0.2083 +/- 0.01)")
