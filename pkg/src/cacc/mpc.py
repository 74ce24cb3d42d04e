"""Sampling-based receding-horizon control under a calibrated assurance margin.

A cross-entropy search over clipped Gaussian control sequences minimizes the
rolled-out task objective subject to the first-step robust constraint
predicted_assurance(x, u0) >= q_hat.  When no sampled candidate satisfies the
constraint, a recovery action maximizing the predicted assurance is returned
instead and the decision is flagged infeasible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 20
    n_candidates: int = 256
    n_elites: int = 24
    n_iterations: int = 3
    init_std_frac: float = 0.3  # initial sampling std as a fraction of the control range
    min_std_frac: float = 0.01

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not self.n_elites < self.n_candidates:
            raise ValueError(
                f"n_elites ({self.n_elites}) must be < n_candidates ({self.n_candidates})"
            )


@dataclass
class ControlDecision:
    u_star: np.ndarray
    feasible: bool
    predicted_h: float
    objective_value: float


def recovery_action(
    x: np.ndarray,
    predict_h,
    control_low: np.ndarray,
    control_high: np.ndarray,
    cfg: MpcConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Least-risky input: argmax of predicted assurance over sampled controls.

    Ties resolve to the lowest candidate index, so the output is deterministic
    for a fixed generator state.
    """
    m = control_low.shape[0]
    U = rng.uniform(control_low, control_high, size=(cfg.n_candidates, m))
    X = np.broadcast_to(x, (cfg.n_candidates, x.shape[0]))
    hvals = predict_h(X, U)
    return U[int(np.argmax(hvals))].copy()


class CemPlanner:
    """Receding-horizon cross-entropy optimizer with one-step warm starting.

    predict_h(X, U) -> (n,), predict_f(X, U) -> (n, state_dim) and
    step_cost(X, U) -> (n,) are arbitrary vectorized callables, so the planner
    is reusable with learned surrogates or analytic toy models.
    """

    def __init__(
        self,
        cfg: MpcConfig,
        control_low: np.ndarray,
        control_high: np.ndarray,
        predict_h,
        predict_f,
        step_cost,
        rng: np.random.Generator,
    ):
        self.cfg = cfg
        self.lo = np.asarray(control_low, dtype=float)
        self.hi = np.asarray(control_high, dtype=float)
        self.predict_h = predict_h
        self.predict_f = predict_f
        self.step_cost = step_cost
        self.rng = rng
        self.m = self.lo.shape[0]
        self.warm_mean = np.zeros((cfg.horizon, self.m)) + 0.5 * (self.lo + self.hi)

    def rollout(self, x: np.ndarray, U_seq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Iterate the surrogate dynamics over (n, N, m) candidate sequences.

        Returns the predicted state trajectory (n, N, state_dim) and the summed
        task objective per candidate; candidates that leave the finite range
        get an infinite objective.
        """
        n, N, m = U_seq.shape
        states = np.empty((n, N, x.shape[0]))
        # divergent candidates are expected to overflow; they are discarded
        # below via an infinite objective
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            X = np.broadcast_to(x, (n, x.shape[0]))
            for i in range(N):
                X = self.predict_f(X, U_seq[:, i, :])
                states[:, i, :] = X
            costs = self.step_cost(
                states.reshape(n * N, -1), U_seq.reshape(n * N, m)
            ).reshape(n, N)
            total = costs.sum(axis=1)
        bad = ~np.isfinite(total)
        if bad.any():
            total = np.where(bad, np.inf, total)
        return states, total

    def decide(self, x: np.ndarray, q_hat: float) -> ControlDecision:
        cfg = self.cfg
        x = np.asarray(x, dtype=float)
        mean = np.clip(self.warm_mean, self.lo, self.hi)
        std = np.full((cfg.horizon, self.m), cfg.init_std_frac) * (self.hi - self.lo)
        std_floor = cfg.min_std_frac * (self.hi - self.lo)

        best_obj = np.inf
        best_seq = None
        best_h = None
        x_tiled = np.broadcast_to(x, (cfg.n_candidates, x.shape[0]))
        for _ in range(cfg.n_iterations):
            noise = self.rng.standard_normal(
                (cfg.n_candidates, cfg.horizon, self.m), dtype=np.float32
            )
            cand = mean + std * noise
            np.clip(cand, self.lo, self.hi, out=cand)
            cand[0] = mean  # keep the warm-start sequence in the pool
            U0 = cand[:, 0, :]
            with np.errstate(over="ignore", invalid="ignore", under="ignore"):
                hvals = self.predict_h(x_tiled, U0)
            feasible = hvals >= q_hat

            if feasible.any():
                # rolling out infeasible candidates would be wasted work
                n_feas = int(feasible.sum())
                obj_feas = np.full(cfg.n_candidates, np.inf)
                if n_feas == cfg.n_candidates:
                    _, obj_feas = self.rollout(x, cand)
                else:
                    keep = np.flatnonzero(feasible)
                    _, obj_feas[keep] = self.rollout(x, cand[keep])
                idx = int(np.argmin(obj_feas))
                if obj_feas[idx] < best_obj or best_seq is None:
                    best_obj = float(obj_feas[idx])
                    best_seq = cand[idx].copy()
                    best_h = float(hvals[idx])
                order = np.argsort(obj_feas, kind="stable")
                elites = cand[order[: min(cfg.n_elites, n_feas)]]
            else:
                order = np.argsort(-hvals, kind="stable")
                elites = cand[order[: cfg.n_elites]]
            mean = elites.mean(axis=0)
            std = np.maximum(elites.std(axis=0), std_floor)

        if best_seq is not None and np.isfinite(best_obj):
            u0 = best_seq[0]
            self.warm_mean = np.vstack([best_seq[1:], best_seq[-1:]])
            return ControlDecision(
                u_star=u0, feasible=True,
                predicted_h=best_h, objective_value=best_obj,
            )

        u0 = recovery_action(x, self.predict_h, self.lo, self.hi, cfg, self.rng)
        self.warm_mean = np.vstack([self.warm_mean[1:], self.warm_mean[-1:]])
        pred_h = float(
            self.predict_h(x[None, :], u0[None, :])[0]
        )
        return ControlDecision(
            u_star=u0, feasible=False, predicted_h=pred_h, objective_value=np.inf,
        )
