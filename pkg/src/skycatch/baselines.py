"""Classical impact-point predictors: ballistic RANSAC and linear SVR.

The Newton predictor fits p(t) = c0 + c1 t + g t^2 / 2 (gravity fixed,
six free parameters) to the observed history with RANSAC outlier
rejection, then intersects the fitted parabola with the catching plane.
The SVR predictor is a linear epsilon-insensitive regressor from
flattened history positions to the impact point, trained by subgradient
descent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, PredictionError
from .trajkit import GRAVITY, PlaneSpec, TrainingWindow

_G_Z = float(GRAVITY[2])


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 200
    inlier_threshold: float = 0.01  # meters
    min_inlier_fraction: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.inlier_threshold <= 0.0:
            raise ValueError("inlier_threshold must be positive")

    def min_inliers(self, n: int) -> int:
        return max(3, int(math.ceil(self.min_inlier_fraction * n)))


def _fit_ballistic(t: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Least-squares c0, c1 per axis of p = c0 + c1 t + g t^2 / 2.

    Returns (2, 3): row 0 is c0, row 1 is c1.
    """
    d = positions - 0.5 * np.outer(t * t, GRAVITY)
    basis = np.stack([np.ones_like(t), t], axis=1)     # (n, 2)
    coef, *_ = np.linalg.lstsq(basis, d, rcond=None)
    return coef


def _ballistic_residuals(t: np.ndarray, positions: np.ndarray,
                         coef: np.ndarray) -> np.ndarray:
    model = coef[0] + np.outer(t, coef[1]) + 0.5 * np.outer(t * t, GRAVITY)
    return np.linalg.norm(positions - model, axis=1)


def newton_predict(times: np.ndarray, positions: np.ndarray, plane: PlaneSpec,
                   cfg: RansacConfig = RansacConfig()) -> np.ndarray:
    """RANSAC ballistic fit of the history, intersected with the plane.

    Minimal 3-sample subsets propose fits; the largest consensus set
    (residual below the inlier threshold) is refit by least squares,
    and the impact point is the descending root of the fitted vertical
    quadratic at the plane height.
    """
    times = np.asarray(times, dtype=float)
    positions = np.asarray(positions, dtype=float)
    n = times.shape[0]
    if n < 3:
        raise PredictionError(f"ballistic fit needs at least 3 history samples, got {n}")
    t = times - times[0]

    rng = np.random.default_rng(cfg.seed)
    best_count = -1
    best_mask = None
    for _ in range(cfg.iterations):
        pick = rng.choice(n, size=3, replace=False)
        coef = _fit_ballistic(t[pick], positions[pick])
        mask = _ballistic_residuals(t, positions, coef) < cfg.inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            if count == n:
                break

    if best_count < cfg.min_inliers(n):
        raise PredictionError(
            f"RANSAC consensus too small: {best_count} inliers of {n} samples "
            f"(need {cfg.min_inliers(n)})")

    coef = _fit_ballistic(t[best_mask], positions[best_mask])
    return _ballistic_impact(coef, plane.height, anchor=times[0])


def _ballistic_impact(coef: np.ndarray, height: float, anchor: float) -> np.ndarray:
    # Vertical component: 0.5 g t^2 + c1z t + (c0z - h) = 0; the parabola
    # opens downward, so the larger root is the descending crossing.
    a = 0.5 * _G_Z
    b = coef[1, 2]
    c = coef[0, 2] - height
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        raise PredictionError(
            f"fitted parabola never reaches plane z={height:.3g} (apex below plane)")
    t_star = (-b - math.sqrt(disc)) / (2.0 * a)  # a < 0: this is the larger root
    if t_star < 0.0:
        raise PredictionError("fitted parabola crosses the plane only in the past")
    point = coef[0] + coef[1] * t_star + 0.5 * GRAVITY * t_star * t_star
    point[2] = height
    return point


def make_newton_predictor(plane: PlaneSpec, cfg: RansacConfig = RansacConfig()):
    """Adapter: (times, states) -> impact point."""

    def predict(times: np.ndarray, states: np.ndarray) -> np.ndarray:
        return newton_predict(times, states[:, :3], plane, cfg)

    return predict


# ---------------------------------------------------------------------------
# linear epsilon-insensitive SVR


@dataclass
class SvrModel:
    """Per-output-dimension linear model over centered history positions."""

    weights: np.ndarray       # (3, d)
    bias: np.ndarray          # (3,)
    feature_mean: np.ndarray  # (d,)
    history_steps: int
    epsilon: float
    lam: float
    trained: bool = False
    objective_history: list[float] = field(default_factory=list)

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]


def _window_features(windows: list[TrainingWindow]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([w.history[:, :3].reshape(-1) for w in windows])
    y = np.stack([w.impact_point for w in windows])
    return x, y


def svr_objective(weights: np.ndarray, bias: np.ndarray, phi: np.ndarray,
                  y: np.ndarray, epsilon: float, lam: float) -> tuple[float, float]:
    """(total objective, epsilon-insensitive data term), summed over the
    three output dimensions."""
    resid = y - (phi @ weights.T + bias)
    data = float(np.mean(np.maximum(np.abs(resid) - epsilon, 0.0).sum(axis=1)))
    reg = lam * float(np.sum(weights * weights))
    return reg + data, data


def _subgradient(weights, bias, phi, y, epsilon, lam):
    resid = y - (phi @ weights.T + bias)            # (n, 3)
    active = (np.abs(resid) > epsilon) * np.sign(resid)
    n = phi.shape[0]
    g_w = 2.0 * lam * weights - active.T @ phi / n
    g_b = -active.mean(axis=0)
    return g_w, g_b


def svr_fit(windows: list[TrainingWindow], epsilon: float = 0.01,
            lam: float = 1e-6, epochs: int = 500, seed: int = 0,
            batch_size: int | None = None, lr0: float = 0.5) -> SvrModel:
    """Train the linear SVR by seeded subgradient descent.

    Full-batch mode (``batch_size=None``) takes guarded steps with a
    backtracking step size and keeps the best iterate found, so the
    recorded per-epoch objective is non-increasing.  Stochastic mode
    shuffles minibatches each epoch with a decaying step and returns the
    tail-averaged iterate.
    """
    if not windows:
        raise ValueError("svr_fit needs a non-empty training set")
    x, y = _window_features(windows)
    mean = x.mean(axis=0)
    phi = x - mean
    dim = phi.shape[1]
    t_steps = windows[0].history.shape[0] - 1
    w = np.zeros((3, dim))
    b = np.zeros(3)
    model = SvrModel(weights=w, bias=b, feature_mean=mean, history_steps=t_steps,
                     epsilon=epsilon, lam=lam)

    if batch_size is None:
        _fit_full_batch(model, phi, y, epochs, lr0)
    else:
        _fit_stochastic(model, phi, y, epochs, lr0, batch_size, seed)
    model.trained = True
    return model


def _fit_full_batch(model: SvrModel, phi, y, epochs, lr0):
    w, b = model.weights, model.bias
    eps, lam = model.epsilon, model.lam
    f_cur, _ = svr_objective(w, b, phi, y, eps, lam)
    best = (w.copy(), b.copy(), f_cur)
    lr = lr0
    for _ in range(epochs):
        g_w, g_b = _subgradient(w, b, phi, y, eps, lam)
        lr = min(lr * 1.3, lr0)
        while True:
            w_try = w - lr * g_w
            b_try = b - lr * g_b
            f_try, _ = svr_objective(w_try, b_try, phi, y, eps, lam)
            if f_try <= f_cur or lr < 1e-14:
                break
            lr *= 0.5
        w, b, f_cur = w_try, b_try, f_try
        if f_cur < best[2]:
            best = (w.copy(), b.copy(), f_cur)
        model.objective_history.append(best[2])
    model.weights, model.bias = best[0], best[1]


def _fit_stochastic(model: SvrModel, phi, y, epochs, lr0, batch_size, seed):
    w, b = model.weights.copy(), model.bias.copy()
    eps, lam = model.epsilon, model.lam
    rng = np.random.default_rng(seed)
    n = phi.shape[0]
    step = 0
    avg_w = np.zeros_like(w)
    avg_b = np.zeros_like(b)
    n_avg = 0
    tail_start = (epochs // 2) * max(1, (n + batch_size - 1) // batch_size)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            g_w, g_b = _subgradient(w, b, phi[idx], y[idx], eps, lam)
            lr = lr0 / (1.0 + step / 100.0)
            w -= lr * g_w
            b -= lr * g_b
            step += 1
            if step > tail_start:
                n_avg += 1
                avg_w += (w - avg_w) / n_avg
                avg_b += (b - avg_b) / n_avg
        f_avg, _ = svr_objective(avg_w if n_avg else w, avg_b if n_avg else b,
                                 phi, y, eps, lam)
        model.objective_history.append(f_avg)
    if n_avg:
        model.weights, model.bias = avg_w, avg_b
    else:
        model.weights, model.bias = w, b


def svr_predict(model: SvrModel, history: np.ndarray) -> np.ndarray:
    """Impact point from one history of T+1 states (or bare positions)."""
    if not model.trained:
        raise PredictionError("SVR model has not been trained")
    history = np.asarray(history, dtype=float)
    if history.ndim == 2 and history.shape[1] >= 3:
        flat = history[:, :3].reshape(-1)
    else:
        flat = history.reshape(-1)
    if flat.shape[0] != model.feature_dim:
        raise PredictionError(
            f"history yields {flat.shape[0]} features, model expects {model.feature_dim} "
            f"(T={model.history_steps})")
    return model.weights @ (flat - model.feature_mean) + model.bias


def make_svr_predictor(model: SvrModel):
    """Adapter: (times, states) -> impact point."""

    def predict(times: np.ndarray, states: np.ndarray) -> np.ndarray:
        return svr_predict(model, states)

    return predict


# ---------------------------------------------------------------------------
# persistence through the shared checkpoint container


def save_svr(model: SvrModel, path) -> None:
    from .predictors import checkpoint_write

    meta = {
        "kind": "svr",
        "history_steps": model.history_steps,
        "epsilon": model.epsilon,
        "lam": model.lam,
    }
    blocks = {
        "weights": model.weights,
        "bias": model.bias,
        "feature_mean": model.feature_mean,
    }
    checkpoint_write(path, meta, blocks)


def load_svr(path) -> SvrModel:
    from .predictors import checkpoint_read

    meta, blocks = checkpoint_read(path)
    if meta.get("kind") != "svr":
        raise DataFormatError(f"{path}: checkpoint kind {meta.get('kind')!r} is not 'svr'")
    return SvrModel(weights=blocks["weights"], bias=blocks["bias"],
                    feature_mean=blocks["feature_mean"],
                    history_steps=int(meta["history_steps"]),
                    epsilon=float(meta["epsilon"]), lam=float(meta["lam"]),
                    trained=True)
