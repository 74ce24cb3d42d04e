"""Surrogate predictors for the assurance value and the transition map.

Both predictors are linear in benchmark-specific dictionaries of polynomial
and trigonometric basis functions, chosen so the nominal (disturbance-free)
dynamics and the induced next-step assurance value are exactly representable.
Offline warm-start uses ridge least squares on samples from the admissible
set; online adaptation is an event-triggered recursive-least-squares residual
correction with forgetting.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .envs import Benchmark, make_benchmark

RLS_FORGETTING = 0.995
RLS_RIDGE = 1e-4
DEFAULT_TRIGGER_EPS = 0.01


def _pair_indices(d: int) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.triu_indices(d)
    return i, j


class FeatureMap:
    """Basis functions over (state, control) for one benchmark.

    ``dyn_features`` spans the nominal one-step dynamics; ``h_features``
    spans the next-step assurance value (products of dynamics-basis terms up
    to the degree of h).
    """

    def __init__(self, name: str):
        self.name = name
        if name == "vanderpol":
            self.dyn_dim = 6
            self._hi, self._hj = _pair_indices(6)
            self._two_stage = False
        elif name in ("pendulum", "mountaincar"):
            self.dyn_dim = 5
            self._i2, self._j2 = _pair_indices(5)
            self._hi, self._hj = _pair_indices(len(self._i2))
            self._two_stage = True
        elif name == "lorenz":
            # quadratic advection pairs appearing in the cyclic dynamics
            pairs = []
            for i in range(6):
                pairs.append(tuple(sorted(((i + 1) % 6, (i + 5) % 6))))
                pairs.append(tuple(sorted(((i + 4) % 6, (i + 5) % 6))))
            self.quad_pairs = sorted(set(pairs))
            self._qa = np.array([p[0] for p in self.quad_pairs])
            self._qb = np.array([p[1] for p in self.quad_pairs])
            self.dyn_dim = 1 + 6 + len(self.quad_pairs) + 6
            # products needed for sum of squared next-state components
            blocks = []
            for i in range(6):
                qa = self.quad_pairs.index(tuple(sorted(((i + 1) % 6, (i + 5) % 6))))
                qb = self.quad_pairs.index(tuple(sorted(((i + 4) % 6, (i + 5) % 6))))
                blocks.append([0, 1 + i, 7 + qa, 7 + qb, 7 + len(self.quad_pairs) + i])
            prods = set()
            for b in blocks:
                prods.update(tuple(sorted(p)) for p in itertools.combinations_with_replacement(b, 2))
            prods = sorted(prods)
            self._hi = np.array([p[0] for p in prods])
            self._hj = np.array([p[1] for p in prods])
            self._two_stage = False
        else:
            raise ValueError(f"no feature map for benchmark {name!r}")
        self.h_dim = len(self._hi)

    def dyn_features(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        name = self.name
        if name == "vanderpol":
            G = np.empty((n, 6))
            G[:, 0] = 1.0
            G[:, 1] = X[:, 0]
            G[:, 2] = X[:, 1]
            np.multiply(G[:, 1], G[:, 1], out=G[:, 3])
            G[:, 3] *= G[:, 2]
            np.multiply(U[:, 0], 0.025, out=G[:, 4])
            np.multiply(U[:, 1], 0.025, out=G[:, 5])
        elif name == "pendulum":
            G = np.empty((n, 5))
            G[:, 0] = 1.0
            np.multiply(X[:, 0], 1.0 / 6.0, out=G[:, 1])
            np.multiply(X[:, 1], 1.0 / (1.5 * np.pi), out=G[:, 2])
            np.sin(X[:, 1], out=G[:, 3])
            np.multiply(U[:, 0], 1.0 / 80.0, out=G[:, 4])
        elif name == "mountaincar":
            G = np.empty((n, 5))
            G[:, 0] = 1.0
            np.multiply(X[:, 0], 20.0, out=G[:, 1])
            np.add(X[:, 1], 0.3, out=G[:, 2])
            G[:, 2] *= 1.0 / 0.7
            np.multiply(X[:, 1], 3.0, out=G[:, 3])
            np.cos(G[:, 3], out=G[:, 3])
            np.multiply(U[:, 0], 0.005, out=G[:, 4])
        else:  # lorenz
            G = np.empty((n, self.dyn_dim))
            G[:, 0] = 1.0
            G[:, 1:7] = X
            nq = len(self.quad_pairs)
            np.multiply(X[:, self._qa], X[:, self._qb], out=G[:, 7:7 + nq])
            np.multiply(U, 0.01, out=G[:, 7 + nq:])
        return G

    def h_features(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        G = self.dyn_features(X, U)
        if self._two_stage:
            G = G[:, self._i2] * G[:, self._j2]
        return G[:, self._hi] * G[:, self._hj]


# bounding boxes used to sample training states; the admissible set is
# carved out of each box by rejection on h(x) >= 0
_SAMPLE_BOX = {
    "vanderpol": np.array([[-1.0, 1.0], [-1.0, 1.0]]),
    "pendulum": np.array([[-6.0, 6.0], [-1.5 * np.pi, 1.5 * np.pi]]),
    "mountaincar": np.array([[-0.05, 0.05], [-1.0, 0.4]]),
    "lorenz": np.array([[-1.0, 1.0]] * 6),
}

# trusted operating envelope for the online corrections.  Outside the box,
# predictions fall back to the frozen offline weights and transitions are not
# used for updates.  Corrections learned near the admissible set can
# extrapolate pathologically and mislead the recovery policy, but the
# fallback is only an improvement where the offline fit itself extrapolates
# the nominal model faithfully, which holds for the vanderpol dictionary.
# The other benchmarks recover from deep excursions by learning at the
# excursion states themselves, so their corrections are left unrestricted.
_TRUST_BOX = {
    "vanderpol": np.array([[-1.5, 1.5], [-1.5, 1.5]]),
}


def sample_admissible(bench: Benchmark, n: int, rng: np.random.Generator) -> np.ndarray:
    box = _SAMPLE_BOX[bench.spec.name]
    out = np.empty((n, bench.spec.state_dim))
    filled = 0
    while filled < n:
        batch = rng.uniform(box[:, 0], box[:, 1], size=(2 * (n - filled) + 16, bench.spec.state_dim))
        keep = batch[bench.h(batch) >= 0.0]
        take = min(len(keep), n - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    return out


@dataclass
class _RlsState:
    P: np.ndarray  # inverse covariance surrogate, symmetric positive definite
    forgetting: float

    def step(self, phi: np.ndarray, err: float, w: np.ndarray) -> np.ndarray:
        lam = self.forgetting
        Pphi = self.P @ phi
        k = Pphi / (lam + phi @ Pphi)
        self.P = (self.P - np.outer(k, Pphi)) / lam
        return w + k * err


class SurrogatePair:
    """Learned assurance predictor and transition predictor for one benchmark."""

    def __init__(
        self,
        fmap: FeatureMap,
        w_h: np.ndarray,
        W_f: np.ndarray,
        trigger_eps: float = DEFAULT_TRIGGER_EPS,
        correct_f: bool = True,
        forgetting: float = RLS_FORGETTING,
        ridge: float = RLS_RIDGE,
    ):
        self.fmap = fmap
        self.w_h = np.asarray(w_h, dtype=float)
        self.W_f = np.asarray(W_f, dtype=float)
        # offline weights are kept as the extrapolation fallback: the online
        # corrections below are only valid near the data that produced them
        self.w_h_base = self.w_h.copy()
        self.W_f_base = self.W_f.copy()
        self.trigger_eps = trigger_eps
        self.correct_f = correct_f
        self._rls_h = _RlsState(P=np.eye(fmap.h_dim) / ridge, forgetting=forgetting)
        n_state = self.W_f.shape[1]
        self._rls_f = [
            _RlsState(P=np.eye(fmap.dyn_dim) / ridge, forgetting=forgetting)
            for _ in range(n_state)
        ]
        self.h_update_count = 0
        self.f_update_count = 0
        # trust region for the online corrections: polynomial corrections fit
        # near the admissible set extrapolate pathologically, so both updates
        # and corrected predictions are restricted to this state box and the
        # frozen offline weights (which extrapolate the nominal model exactly)
        # take over outside it
        self.trust_lo: np.ndarray | None = None
        self.trust_hi: np.ndarray | None = None

    def _extrapolating(self, X: np.ndarray) -> np.ndarray | None:
        if self.trust_lo is None:
            return None
        mask = np.any((X < self.trust_lo) | (X > self.trust_hi), axis=1)
        return mask if mask.any() else None

    def predict_h(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        H = self.fmap.h_features(X, U)
        pred = H @ self.w_h
        extr = self._extrapolating(X)
        if extr is not None:
            pred[extr] = H[extr] @ self.w_h_base
        return pred

    def predict_f(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        G = self.fmap.dyn_features(X, U)
        pred = G @ self.W_f
        extr = self._extrapolating(X)
        if extr is not None:
            pred[extr] = G[extr] @ self.W_f_base
        return pred

    def predict_h_scalar(self, x: np.ndarray, u: np.ndarray) -> float:
        return float(self.predict_h(np.atleast_2d(x), np.atleast_2d(u))[0])

    def residual_update(
        self,
        x_prev: np.ndarray,
        u_prev: np.ndarray,
        h_observed: float,
        x_observed: np.ndarray,
    ) -> None:
        """Event-triggered RLS correction from one completed transition."""
        Xp = np.atleast_2d(np.asarray(x_prev, float))
        Up = np.atleast_2d(np.asarray(u_prev, float))
        with np.errstate(over="ignore", invalid="ignore"):
            phi_h = self.fmap.h_features(Xp, Up)[0]
        if not (np.all(np.isfinite(phi_h)) and np.isfinite(h_observed)):
            return  # far outside the modeled region; skip rather than corrupt
        if self.trust_lo is not None and (
            self._extrapolating(Xp) is not None
            or self._extrapolating(np.atleast_2d(np.asarray(x_observed, float))) is not None
        ):
            return  # transition leaves the trusted box; do not learn from it
        err_h = h_observed - float(phi_h @ self.w_h)
        if abs(err_h) > self.trigger_eps:
            self.w_h = self._rls_h.step(phi_h, err_h, self.w_h)
            self.h_update_count += 1
        if not self.correct_f:
            return
        g = self.fmap.dyn_features(Xp, Up)[0]
        if not np.all(np.isfinite(g)):
            return
        pred = g @ self.W_f
        for j, err in enumerate(np.asarray(x_observed, float) - pred):
            if abs(err) > self.trigger_eps:
                self.W_f[:, j] = self._rls_f[j].step(g, float(err), self.W_f[:, j])
                self.f_update_count += 1

    def dump_weights(self) -> str:
        """Plain-text weight listing for debugging."""
        lines = [f"benchmark={self.fmap.name}"]
        lines.append("w_h " + " ".join(f"{v:.9g}" for v in self.w_h))
        for j in range(self.W_f.shape[1]):
            lines.append(f"W_f[{j}] " + " ".join(f"{v:.9g}" for v in self.W_f[:, j]))
        return "\n".join(lines) + "\n"


def _ridge_solve(F: np.ndarray, Y: np.ndarray, rel_ridge: float) -> tuple[np.ndarray, float]:
    """Solve min ||F w - Y||^2 + lam ||w||^2, escalating lam on failure."""
    gram = F.T @ F
    scale = max(np.trace(gram) / gram.shape[0], 1.0)
    lam = rel_ridge * scale
    for _ in range(8):
        try:
            w = np.linalg.solve(gram + lam * np.eye(gram.shape[0]), F.T @ Y)
            if np.all(np.isfinite(w)):
                return w, lam
        except np.linalg.LinAlgError:
            pass
        lam *= 100.0
    raise RuntimeError("ridge regression failed even with escalated regularization")


def fit_offline(
    bench: Benchmark,
    n_samples: int = 5000,
    seed: int | np.random.SeedSequence = 0,
    trigger_eps: float = DEFAULT_TRIGGER_EPS,
    correct_f: bool = True,
    rel_ridge: float = 1e-10,
) -> SurrogatePair:
    """Warm-start both predictors on nominal-dynamics samples.

    Targets are the disturbance-free next state f(x, u) and its assurance
    value h(f(x, u)), over states drawn uniformly from the admissible set and
    controls uniform over the control box.
    """
    fmap = FeatureMap(bench.spec.name)
    if n_samples < fmap.h_dim:
        raise ValueError(
            f"need at least {fmap.h_dim} samples for {bench.spec.name}, got {n_samples}"
        )
    rng = np.random.default_rng(seed)
    X = sample_admissible(bench, n_samples, rng)
    U = rng.uniform(
        bench.spec.control_low, bench.spec.control_high,
        size=(n_samples, bench.spec.control_dim),
    )
    nominal = bench.nominal_params()
    X_next = bench.dynamics(X, U, nominal)
    y_h = bench.h(X_next)

    F = fmap.h_features(X, U)
    w_h, _ = _ridge_solve(F, y_h, rel_ridge)
    G = fmap.dyn_features(X, U)
    W_f, _ = _ridge_solve(G, X_next, rel_ridge)

    model = SurrogatePair(fmap, w_h, W_f, trigger_eps=trigger_eps, correct_f=correct_f)
    model.train_rmse_h = float(np.sqrt(np.mean((F @ w_h - y_h) ** 2)))
    model.train_rmse_f = float(np.sqrt(np.mean((G @ W_f - X_next) ** 2)))
    box = _TRUST_BOX.get(bench.spec.name)
    if box is not None:
        model.trust_lo = box[:, 0].copy()
        model.trust_hi = box[:, 1].copy()
    return model
