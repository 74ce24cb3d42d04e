"""Benchmark environments: deterministic dynamics with seeded parameter drift.

Each benchmark exposes vectorized nominal dynamics (used for surrogate
fitting and predictive rollouts), the assurance function h whose
zero-superlevel set is the admissible region, the normalized violation cost,
and an antagonistic task cost.  Time-varying disturbance parameters are
piecewise constant, resampled on a fixed period from a seeded generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

ENV_NAMES = ("vanderpol", "pendulum", "mountaincar", "lorenz")


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    control_dim: int
    control_low: np.ndarray
    control_high: np.ndarray
    m_h: float  # violation-cost normalization constant
    param_period: int  # steps between parameter resamples
    x0: np.ndarray


@dataclass
class EnvState:
    spec: EnvSpec
    x: np.ndarray
    k: int
    params: dict
    rng: np.random.Generator
    clamped_control: bool = False
    exited_state_space: bool = False


def sample_beta(a: float, b: float, rng: np.random.Generator) -> float:
    """One Beta(a, b) draw on [0, 1]."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError(f"beta shapes must be positive, got a={a}, b={b}")
    return float(rng.beta(a, b))


def _beta_shifted(rng, scale, shift):
    return scale * sample_beta(0.1, 0.1, rng) + shift


class Benchmark:
    """Shared machinery; subclasses supply dynamics and cost functions."""

    spec: EnvSpec

    def create(self, seed: int) -> EnvState:
        rng = np.random.default_rng(seed)
        params = self.initial_params(rng)
        return EnvState(spec=self.spec, x=self.spec.x0.copy(), k=0, params=params, rng=rng)

    def step(self, state: EnvState, u: np.ndarray) -> EnvState:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        lo, hi = self.spec.control_low, self.spec.control_high
        clamped = bool(np.any(u < lo) or np.any(u > hi))
        u = np.clip(u, lo, hi)
        x_next = self.dynamics(state.x[None, :], u[None, :], state.params)[0]
        k_next = state.k + 1
        params = dict(state.params)
        if k_next % self.spec.param_period == 0:
            params = self.resample_params(params, state.rng)
        exited = state.exited_state_space or not self.in_state_space(x_next)
        return replace(
            state, x=x_next, k=k_next, params=params,
            clamped_control=clamped, exited_state_space=exited,
        )

    def rho(self, x: np.ndarray) -> float:
        """Normalized violation cost: 0 inside the admissible set, else -h/M_h capped at 1."""
        h = self.h(np.asarray(x, dtype=float)[None, :])[0]
        if h >= 0.0:
            return 0.0
        return min(1.0, -h / self.spec.m_h)

    def h_scalar(self, x: np.ndarray) -> float:
        return float(self.h(np.asarray(x, dtype=float)[None, :])[0])

    def task_cost_scalar(self, x: np.ndarray, u: np.ndarray) -> float:
        return float(
            self.task_cost(np.asarray(x, float)[None, :], np.asarray(u, float)[None, :])[0]
        )

    def nominal_params(self) -> dict:
        """Parameter snapshot with all disturbances zeroed."""
        raise NotImplementedError

    def initial_params(self, rng) -> dict:
        raise NotImplementedError

    def resample_params(self, params: dict, rng) -> dict:
        raise NotImplementedError

    def dynamics(self, X: np.ndarray, U: np.ndarray, params: dict) -> np.ndarray:
        raise NotImplementedError

    def h(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def in_state_space(self, x: np.ndarray) -> bool:
        raise NotImplementedError

    def task_cost(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        raise NotImplementedError


_CONTROL_REG = 1e-4  # small quadratic regularizer for solver stability


class Vanderpol(Benchmark):
    def __init__(self):
        self.spec = EnvSpec(
            name="vanderpol", state_dim=2, control_dim=2,
            control_low=np.array([-40.0, -40.0]), control_high=np.array([40.0, 40.0]),
            m_h=1.0, param_period=10, x0=np.zeros(2),
        )

    def nominal_params(self):
        return {"p": 0.0, "q": 0.0}

    def initial_params(self, rng):
        return self.resample_params({}, rng)

    def resample_params(self, params, rng):
        return {
            "p": _beta_shifted(rng, 14.0, -7.0),
            "q": _beta_shifted(rng, 14.0, -7.0),
        }

    def dynamics(self, X, U, params):
        x, y = X[:, 0], X[:, 1]
        out = np.empty_like(X)
        out[:, 0] = x + 0.01 * (-2.0 * y + U[:, 0] + params["p"])
        out[:, 1] = y + 0.01 * (
            0.8 * x - 10.0 * (x * x - 0.21) * y + U[:, 1] + params["q"]
        )
        return out

    def h(self, X):
        return 1.0 - X[:, 0] ** 2 - X[:, 1] ** 2

    def in_state_space(self, x):
        return x[0] ** 2 + x[1] ** 2 <= 2.0

    def task_cost(self, X, U):
        d = (X[:, 0] - 0.8) ** 2 + (X[:, 1] - 0.8) ** 2
        return d + _CONTROL_REG * np.einsum("ij,ij->i", U, U)


class Pendulum(Benchmark):
    # state is (theta_dot, theta)
    def __init__(self):
        self.spec = EnvSpec(
            name="pendulum", state_dim=2, control_dim=1,
            control_low=np.array([-80.0]), control_high=np.array([80.0]),
            m_h=1.0, param_period=50, x0=np.zeros(2),
        )

    def nominal_params(self):
        return {"r": 0.0, "q": 0.0}

    def initial_params(self, rng):
        return {"r": float(rng.uniform(-5.0, 5.0)), "q": 0.0}

    def resample_params(self, params, rng):
        return {"r": float(rng.uniform(-5.0, 5.0)), "q": params["q"] + 0.01}

    def dynamics(self, X, U, params):
        td, th = X[:, 0], X[:, 1]
        out = np.empty_like(X)
        td_next = td + 0.05 * (15.0 * np.sin(th) + 3.0 * U[:, 0] + params["r"] + params["q"])
        out[:, 0] = td_next
        out[:, 1] = th + 0.05 * td_next
        return out

    def h(self, X):
        return 1.0 - (X[:, 0] / 6.0) ** 4 - (X[:, 1] / (1.5 * np.pi)) ** 4

    def in_state_space(self, x):
        return (x[0] / 6.0) ** 4 + (x[1] / (1.5 * np.pi)) ** 4 <= 2.0

    def task_cost(self, X, U):
        return -X[:, 0] ** 2 + _CONTROL_REG * np.einsum("ij,ij->i", U, U)


class MountainCar(Benchmark):
    # state is (v, p)
    def __init__(self):
        self.spec = EnvSpec(
            name="mountaincar", state_dim=2, control_dim=1,
            control_low=np.array([-200.0]), control_high=np.array([200.0]),
            m_h=1.0, param_period=5, x0=np.array([0.0, -0.3]),
        )

    def nominal_params(self):
        return {"m": 0.0, "r": 0.0, "q": 0.0}

    def initial_params(self, rng):
        return {
            "m": 0.0,
            "r": _beta_shifted(rng, 0.004, -0.002),
            "q": _beta_shifted(rng, 0.004, -0.002),
        }

    def resample_params(self, params, rng):
        return {
            "m": params["m"] - 5e-8,
            "r": _beta_shifted(rng, 0.004, -0.002),
            "q": _beta_shifted(rng, 0.004, -0.002),
        }

    def dynamics(self, X, U, params):
        v, p = X[:, 0], X[:, 1]
        out = np.empty_like(X)
        v_next = (
            v + (0.0015 + params["m"]) * U[:, 0]
            - 0.0025 * np.cos(3.0 * p) + params["r"]
        )
        out[:, 0] = v_next
        out[:, 1] = p + v_next + params["q"]
        return out

    def h(self, X):
        return 1.0 - (X[:, 0] / 0.05) ** 4 - ((X[:, 1] + 0.3) / 0.7) ** 4

    def in_state_space(self, x):
        return (x[0] / 0.05) ** 4 + ((x[1] + 0.3) / 0.7) ** 4 <= 2.0

    def task_cost(self, X, U):
        return -X[:, 0] ** 2 + _CONTROL_REG * np.einsum("ij,ij->i", U, U)


class Lorenz(Benchmark):
    # 6-dimensional cyclic Lorenz-96 style model
    def __init__(self):
        self.spec = EnvSpec(
            name="lorenz", state_dim=6, control_dim=6,
            control_low=np.full(6, -100.0), control_high=np.full(6, 100.0),
            m_h=11.0, param_period=5, x0=np.zeros(6),
        )

    def nominal_params(self):
        return {"p": 0.0}

    def initial_params(self, rng):
        return {"p": float(rng.uniform(-5.0, 5.0))}

    def resample_params(self, params, rng):
        return {"p": float(rng.uniform(-5.0, 5.0))}

    def dynamics(self, X, U, params):
        out = np.empty_like(X)
        for i in range(6):
            adv = (X[:, (i + 1) % 6] - X[:, (i + 4) % 6]) * X[:, (i + 5) % 6]
            drive = U[:, i] + (params["p"] if i == 0 else 0.0)
            out[:, i] = X[:, i] + 0.01 * (adv - X[:, i] + drive)
        return out

    def h(self, X):
        return 1.0 - np.sum(X * X, axis=1)

    def in_state_space(self, x):
        return float(np.dot(x, x)) <= 12.0

    def task_cost(self, X, U):
        return X[:, 0] + _CONTROL_REG * np.einsum("ij,ij->i", U, U)


_REGISTRY = {
    "vanderpol": Vanderpol,
    "pendulum": Pendulum,
    "mountaincar": MountainCar,
    "lorenz": Lorenz,
}


def make_benchmark(name: str) -> Benchmark:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; choose from {ENV_NAMES}") from None
