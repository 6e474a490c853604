"""Self-normalized importance sampling from the Gaussian base.

Draws ``x_j ~ N(mu, Sigma)`` are weighted by the model's tilt factor
(``exp(theta . phi(x))`` or the predictive quadratic form). Weights are
kept in log space and stored as ``exp(log_w - max)`` so none overflow;
``log_shift`` records the subtracted maximum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .model import TgpModel

BATCH = 8192


def log_tilt(model: TgpModel, X, batch_size: int = BATCH) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty(X.shape[0])
    for i in range(0, X.shape[0], batch_size):
        out[i:i + batch_size] = model.log_tilt(X[i:i + batch_size])
    return out


def tilt_factor(model: TgpModel, x):
    """Tilt factor ``f(x) >= 0``; for a batch, evaluated in log space per point."""
    x = np.asarray(x, dtype=float)
    lt = log_tilt(model, np.atleast_2d(x))
    out = np.exp(lt)
    return float(out[0]) if x.ndim == 1 else out


@dataclass(frozen=True, eq=False)
class WeightedSampleSet:
    """Base draws with unnormalized tilt weights ``weights * exp(log_shift)``."""

    points: np.ndarray
    weights: np.ndarray
    log_shift: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.shape[0] != self.points.shape[0]:
            raise ConfigError("one weight per point required")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise NumericalError("weights must be finite and nonnegative")
        if not np.any(w > 0):
            raise NumericalError("all weights are zero")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def normalized(self) -> np.ndarray:
        return self.weights / self.weights.sum()

    @property
    def ess(self) -> float:
        """Effective sample size ``(sum w)^2 / sum w^2``."""
        w = self.weights
        return float(w.sum() ** 2 / np.sum(w * w))

    def normalizer(self) -> tuple[float, float]:
        """Estimate of ``E_base[f(x)]`` and its standard error."""
        w = self.weights
        scale = np.exp(self.log_shift)
        se = w.std(ddof=1) / np.sqrt(self.n) if self.n > 1 else np.inf
        return float(w.mean() * scale), float(se * scale)


def weighted_from_log(points, log_w, seed=None) -> WeightedSampleSet:
    log_w = np.asarray(log_w, dtype=float)
    finite = np.isfinite(log_w)
    if not np.any(finite):
        raise NumericalError("no point has a finite log weight")
    shift = float(log_w[finite].max())
    w = np.where(finite, np.exp(np.where(finite, log_w, -np.inf) - shift), 0.0)
    return WeightedSampleSet(points, w, shift, seed)


def draw_weighted(model: TgpModel, n_s: int = 250_000, seed: int = 0) -> WeightedSampleSet:
    """``n_s`` base draws weighted by the tilt factor; deterministic in ``seed``."""
    if int(n_s) != n_s or n_s < 1:
        raise ConfigError(f"sample count must be a positive integer, got {n_s}")
    rng = np.random.Generator(np.random.PCG64(seed))
    pts = model.base.sample(int(n_s), rng)
    return weighted_from_log(pts, log_tilt(model, pts), seed)


def resample(ws: WeightedSampleSet, k: int, seed: int = 0) -> np.ndarray:
    """Multinomial resampling of ``k`` points proportional to the weights."""
    if int(k) != k or k < 1:
        raise ConfigError(f"resample count must be a positive integer, got {k}")
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = rng.choice(ws.n, size=int(k), replace=True, p=ws.normalized)
    return ws.points[idx]


def project(ws: WeightedSampleSet, v) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if abs(np.linalg.norm(v) - 1.0) > 1e-10:
        raise ConfigError("projection direction must have unit length")
    return ws.points @ v


def weighted_cdf(values, weights, grid) -> np.ndarray:
    """``F(a) = sum_j w_j 1{values_j <= a} / sum_j w_j`` on a sorted grid."""
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ConfigError("grid must be sorted ascending")
    order = np.argsort(values, kind="stable")
    sv = np.asarray(values)[order]
    cw = np.cumsum(np.asarray(weights, dtype=float)[order])
    total = cw[-1]
    if not total > 0:
        raise NumericalError("total weight is zero")
    idx = np.searchsorted(sv, grid, side="right")
    F = np.where(idx > 0, cw[np.maximum(idx - 1, 0)] / total, 0.0)
    F[idx == len(sv)] = 1.0
    return F


def weighted_marginal_cdf(ws: WeightedSampleSet, v, grid) -> np.ndarray:
    """Marginal CDF of the weighted set along unit direction ``v``."""
    return weighted_cdf(project(ws, v), ws.weights, grid)


def write_samples(path, points, weights=None, delimiter=",") -> None:
    """One point per row (``%.17g``, exact round trip), optional weight column."""
    rows = np.atleast_2d(points)
    if weights is not None:
        rows = np.column_stack([rows, weights])
    with open(path, "w") as fh:
        for r in rows:
            fh.write(delimiter.join(repr(float(v)) for v in r))
            fh.write("\n")
