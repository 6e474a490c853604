"""Sliced KS / Wasserstein comparison against data, and KDE baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .model import BaseMeasure, empirical_base
from .rff import RffBasis
from .sampling import WeightedSampleSet, draw_weighted, weighted_cdf, weighted_from_log

REPORT_VERSION = 1


def ks_distance(F, G) -> float:
    F = np.asarray(F, dtype=float)
    G = np.asarray(G, dtype=float)
    if F.shape != G.shape:
        raise ConfigError("CDFs must be evaluated on the same grid")
    return float(np.max(np.abs(F - G)))


def wasserstein_distance(F, G, grid) -> float:
    """Trapezoidal integral of ``|F - G|`` over the grid."""
    F = np.asarray(F, dtype=float)
    G = np.asarray(G, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if F.shape != G.shape or F.shape != grid.shape:
        raise ConfigError("CDFs must be evaluated on the same grid")
    return float(np.trapezoid(np.abs(F - G), grid))


def empirical_cdf(values, grid) -> np.ndarray:
    values = np.sort(np.asarray(values, dtype=float))
    return np.searchsorted(values, grid, side="right") / values.shape[0]


class KdeModel:
    """Gaussian-kernel density estimate, exact or through random features.

    The kernel is ``exp(-0.5 (x - x')' A (x - x') / gamma^2)`` with
    ``A = basis.sigma_z`` (identity when absent). In ``rff`` mode the
    estimate is ``phi(x) . mean_i phi(x_i)``; negative values are clamped
    to zero and counted in ``clamped``.
    """

    def __init__(self, data, gamma: float, mode: str = "exact", basis: RffBasis | None = None,
                 metric=None):
        X = np.atleast_2d(np.asarray(getattr(data, "rows", data), dtype=float))
        if X.shape[0] < 1:
            raise DataError("KDE needs at least one data point")
        if mode not in ("exact", "rff"):
            raise ConfigError(f"unknown KDE mode {mode!r}")
        if not gamma > 0:
            raise ConfigError("gamma must be positive")
        self.data = X
        self.gamma = float(gamma)
        self.mode = mode
        self.basis = basis
        self.clamped = 0
        if mode == "rff":
            if basis is None:
                raise ConfigError("rff mode needs a basis")
            if basis.d != X.shape[1]:
                raise ConfigError("basis dimension does not match data")
            metric = basis.sigma_z
            self.mean_phi = basis.phi(X).mean(axis=0)
        self.metric = np.eye(X.shape[1]) if metric is None else np.atleast_2d(metric)
        self._base: BaseMeasure | None = None

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @property
    def base(self) -> BaseMeasure:
        if self._base is None:
            self._base = empirical_base(self.data)
        return self._base

    def density(self, x, block: int = 2048):
        x = np.asarray(x, dtype=float)
        Xq = np.atleast_2d(x)
        if Xq.shape[1] != self.d:
            raise ConfigError(f"expected points of dimension {self.d}")
        if self.mode == "rff":
            raw = self.basis.phi(Xq) @ self.mean_phi
            neg = raw < 0
            self.clamped += int(neg.sum())
            out = np.where(neg, 0.0, raw)
        else:
            L = np.linalg.cholesky(self.metric)
            D = self.data @ L / self.gamma
            dn = np.sum(D * D, axis=1)
            out = np.empty(Xq.shape[0])
            for i in range(0, Xq.shape[0], block):
                Q = Xq[i:i + block] @ L / self.gamma
                sq = np.sum(Q * Q, axis=1)[:, None] + dn[None, :] - 2.0 * Q @ D.T
                out[i:i + block] = np.exp(-0.5 * np.maximum(sq, 0.0)).mean(axis=1)
        return float(out[0]) if x.ndim == 1 else out

    def draw_weighted(self, n_s: int, seed: int = 0) -> WeightedSampleSet:
        rng = np.random.Generator(np.random.PCG64(seed))
        if self.mode == "exact":
            # the kernel is a Gaussian with covariance gamma^2 A^-1: sample the mixture
            idx = rng.integers(0, self.data.shape[0], size=int(n_s))
            Linv = np.linalg.cholesky(np.linalg.inv(self.metric))
            pts = self.data[idx] + self.gamma * rng.standard_normal((int(n_s), self.d)) @ Linv.T
            return WeightedSampleSet(pts, np.ones(int(n_s)), 0.0, seed)
        pts = self.base.sample(int(n_s), rng)
        dens = self.density(pts)
        with np.errstate(divide="ignore"):
            log_w = np.log(dens) - self.base.logpdf(pts)
        return weighted_from_log(pts, log_w, seed)


def kde_density(data, gamma: float, x, mode: str = "exact", basis: RffBasis | None = None):
    """Unnormalized mean-kernel density at ``x``; see :class:`KdeModel`."""
    return KdeModel(data, gamma, mode, basis).density(x)


@dataclass
class EvalReport:
    directions: np.ndarray
    ks: np.ndarray
    wd: np.ndarray
    config: dict
    warnings: list = field(default_factory=list)
    clamped: int = 0

    @property
    def summary(self) -> dict:
        return {
            "median_ks": float(np.median(self.ks)),
            "mean_ks": float(np.mean(self.ks)),
            "median_wd": float(np.median(self.wd)),
            "mean_wd": float(np.mean(self.wd)),
        }

    def to_text(self) -> str:
        lines = [f"# tgp-eval-report v{REPORT_VERSION}"]
        for key in sorted(self.config):
            lines.append(f"# config {key}={self.config[key]!r}")
        lines.append(f"# clamped={self.clamped}")
        for w in self.warnings:
            lines.append(f"# warning {w}")
        lines.append("index,ks,wd")
        for i, (k, w) in enumerate(zip(self.ks, self.wd)):
            lines.append(f"{i},{float(k)!r},{float(w)!r}")
        lines.append("# summary")
        for key, val in self.summary.items():
            lines.append(f"{key},{val!r}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        try:
            with open(path, "w") as fh:
                fh.write(self.to_text())
        except OSError as exc:
            raise DataError(f"cannot write report {path}: {exc}") from exc


def read_report(path) -> tuple[np.ndarray, np.ndarray, dict]:
    """Parse a report file into ``(ks, wd, summary)``."""
    ks, wd, summary = [], [], {}
    in_summary = False
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line == "# summary":
                in_summary = True
                continue
            if not line or line.startswith("#") or line == "index,ks,wd":
                continue
            parts = line.split(",")
            if in_summary:
                summary[parts[0]] = float(parts[1])
            else:
                ks.append(float(parts[1]))
                wd.append(float(parts[2]))
    return np.array(ks), np.array(wd), summary


def random_directions(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Normalized standard-normal draws; zero-norm draws are redrawn."""
    out = np.empty((n, d))
    for i in range(n):
        while True:
            v = rng.standard_normal(d)
            nv = np.linalg.norm(v)
            if nv > 0:
                out[i] = v / nv
                break
    return out


def weighted_samples(model, n_s: int, seed: int) -> WeightedSampleSet:
    if hasattr(model, "draw_weighted"):
        return model.draw_weighted(n_s, seed)
    return draw_weighted(model, n_s, seed)


def random_projection_eval(model, data, n_directions: int = 500, grid_points: int = 10_000,
                           n_s: int = 250_000, seed: int = 0,
                           samples: WeightedSampleSet | None = None) -> EvalReport:
    """Sliced KS / WD between the data and a model (or KDE baseline).

    One weighted sample set is drawn and shared by every direction. The
    grid for each direction spans the pooled projections padded by 5% on
    each side.
    """
    X = np.atleast_2d(np.asarray(getattr(data, "rows", data), dtype=float))
    if X.shape[0] == 0:
        raise DataError("no data to evaluate against")
    for name, v in (("n_directions", n_directions), ("grid_points", grid_points), ("n_s", n_s)):
        if int(v) != v or v < 1:
            raise ConfigError(f"{name} must be a positive integer, got {v}")
    if grid_points < 2:
        raise ConfigError("grid_points must be >= 2")
    d = X.shape[1]
    if model.d != d:
        raise ConfigError(f"model dimension {model.d} differs from data dimension {d}")
    dir_seed, sample_seed = np.random.SeedSequence(seed).spawn(2)
    dirs = random_directions(d, int(n_directions), np.random.Generator(np.random.PCG64(dir_seed)))
    if samples is None:
        sample_int = int(sample_seed.generate_state(1, dtype=np.uint64)[0])
        samples = weighted_samples(model, int(n_s), sample_int)
    ks = np.empty(len(dirs))
    wd = np.empty(len(dirs))
    for i, v in enumerate(dirs):
        pd = X @ v
        ps = samples.points @ v
        lo = min(pd.min(), ps.min())
        hi = max(pd.max(), ps.max())
        pad = 0.05 * (hi - lo) if hi > lo else 1.0
        grid = np.linspace(lo - pad, hi + pad, int(grid_points))
        F = empirical_cdf(pd, grid)
        G = weighted_cdf(ps, samples.weights, grid)
        ks[i] = ks_distance(F, G)
        wd[i] = wasserstein_distance(F, G, grid)
    config = {"n_directions": int(n_directions), "grid_points": int(grid_points),
              "n_s": int(samples.n), "seed": int(seed)}
    warnings = []
    ess = samples.ess
    if ess < 100:
        warnings.append(f"low effective sample size {ess:.1f}")
    clamped = int(getattr(model, "clamped", 0))
    return EvalReport(dirs, ks, wd, config, warnings, clamped)


def projected_std(data, directions) -> np.ndarray:
    X = np.atleast_2d(np.asarray(data, dtype=float))
    return (X @ np.asarray(directions).T).std(axis=0, ddof=1)


def sqrt_mean_variance(data) -> float:
    """``sqrt(trace(cov) / d)``, an average per-coordinate standard deviation."""
    X = np.atleast_2d(np.asarray(data, dtype=float))
    return math.sqrt(float(np.trace(np.atleast_2d(np.cov(X, rowvar=False)))) / X.shape[1])
