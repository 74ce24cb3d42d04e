"""Conformal calibration layer: scores, quantiles, boosted loss, threshold updates.

The adaptive level ``delta`` is driven by online gradient descent on a
cost-weighted miscoverage loss.  Three update policies are provided
(cost_aware, standard_aci, conformal_pid) plus a ``none`` passthrough used by
the uncalibrated baseline.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

METHODS = ("cost_aware", "standard_aci", "conformal_pid", "none")

# Integral gain of the PID variant, as a fraction of the learning rate.
PID_INTEGRAL_GAIN_FRACTION = 0.1


@dataclass(frozen=True)
class ThresholdParams:
    """Hyperparameters of the adaptive calibration policy."""

    alpha: float  # target risk budget, in (0, 1)
    beta: float = 0.0  # severity sensitivity, >= 0
    gamma: float = 0.01  # learning rate, > 0
    big_m: float = 2.0  # score upper bound M, > 0
    epsilon: float = 1e-3  # constant used by the delta > 1 quantile branch
    method: str = "cost_aware"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.beta < 0.0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.big_m <= 0.0:
            raise ValueError(f"big_m must be > 0, got {self.big_m}")
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")

    @property
    def loss_max(self) -> float:
        return 1.0 + self.beta

    def delta_interval(self) -> tuple[float, float]:
        """Interval that delta provably never leaves (given in-range init)."""
        return (-self.gamma * (self.loss_max - self.alpha), 1.0 + self.gamma * self.alpha)


@dataclass(frozen=True)
class ThresholdState:
    """Current adaptive level plus bookkeeping for the PID baseline."""

    delta: float
    pid_integral: float = 0.0
    step: int = 0


@dataclass(frozen=True)
class LossRecord:
    e: int  # miscoverage indicator, 0 or 1
    cost: float  # violation cost in [0, 1]
    loss: float  # e * (1 + beta * cost)


@dataclass
class CalibrationWindow:
    """Bounded FIFO of nonconformity scores."""

    capacity: int
    scores: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"window capacity must be >= 1, got {self.capacity}")
        self.scores = deque(self.scores, maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self.scores)

    def push(self, s: float) -> None:
        if not 0.0 <= s:
            raise ValueError(f"score must be nonnegative, got {s}")
        self.scores.append(float(s))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.scores, dtype=float)


def nonconformity_score(
    h_observed: float, h_predicted: float, params: ThresholdParams
) -> tuple[float, bool]:
    """Absolute residual between observed and predicted assurance value.

    Returns the score clamped to [0, M] together with a flag telling whether
    clamping occurred (used to audit the bounded-score assumption).
    """
    if not (math.isfinite(h_observed) and math.isfinite(h_predicted)):
        raise ValueError(
            f"non-finite input to nonconformity_score: "
            f"h_observed={h_observed}, h_predicted={h_predicted}"
        )
    raw = abs(h_observed - h_predicted)
    if raw > params.big_m:
        return params.big_m, True
    return raw, False


def empirical_quantile(
    window: CalibrationWindow | np.ndarray, delta: float, params: ThresholdParams
) -> float:
    """Empirical (1 - delta)-quantile of the stored scores.

    delta < 0 returns the score bound M and delta > 1 returns -epsilon; in
    between, the smallest stored score c with fraction(scores <= c) >= 1 - delta
    is returned.  An empty window falls back to the bootstrap set {-eps, M}.
    """
    if delta < 0.0:
        return params.big_m
    if delta > 1.0:
        return -params.epsilon
    scores = window if isinstance(window, np.ndarray) else window.as_array()
    if scores.size == 0:
        scores = np.array([-params.epsilon, params.big_m])
    s = np.sort(scores)
    n = s.size
    # fraction of scores <= s[i] is counts[i] / n; duplicates share a count
    counts = np.searchsorted(s, s, side="right")
    mask = counts / n >= 1.0 - delta
    idx = int(np.argmax(mask))  # mask[-1] is always True since 1 >= 1 - delta
    return float(s[idx])


def boosted_loss(
    e: int, h_value: float, rho: float, params: ThresholdParams
) -> LossRecord:
    """Couple the miscoverage indicator with the constraint violation cost."""
    if e not in (0, 1):
        raise ValueError(f"miscoverage indicator must be 0 or 1, got {e}")
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"violation cost must lie in [0, 1], got {rho}")
    cost = rho if h_value < 0.0 else 0.0
    loss = e * (1.0 + params.beta * cost)
    return LossRecord(e=e, cost=cost, loss=loss)


def effective_delta(state: ThresholdState, params: ThresholdParams) -> float:
    """Level actually used for quantile lookup.

    Identical to ``state.delta`` except for the PID policy, whose integral
    term is folded in through a saturating nonlinearity.
    """
    if params.method == "conformal_pid":
        gi = PID_INTEGRAL_GAIN_FRACTION * params.gamma
        return state.delta - gi * math.tanh(state.pid_integral * gi)
    return state.delta


def update_threshold(
    state: ThresholdState, loss: LossRecord, params: ThresholdParams
) -> ThresholdState:
    """One online update of the adaptive level from the realized loss."""
    method = params.method
    if method == "cost_aware":
        delta = state.delta + params.gamma * (params.alpha - loss.loss)
        return replace(state, delta=delta, step=state.step + 1)
    if method == "standard_aci":
        delta = state.delta + params.gamma * (params.alpha - loss.e)
        return replace(state, delta=delta, step=state.step + 1)
    if method == "conformal_pid":
        delta = state.delta + params.gamma * (params.alpha - loss.loss)
        integral = state.pid_integral + (loss.loss - params.alpha)
        return ThresholdState(delta=delta, pid_integral=integral, step=state.step + 1)
    # method == "none": level frozen, threshold pinned to 0 by the caller
    return replace(state, step=state.step + 1)
