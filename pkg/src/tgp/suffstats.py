"""Single-pass, mergeable sufficient statistics.

For every noise level ``sigma`` on the grid the accumulator holds

    Phi_prime[h] = sum_i phi'_s(x_i) phi'_s(x_i)^T
    Phi[h]       = sum_i phi_s(x_i) phi_s(x_i)^T          (skipped for grid {0})
    psi_prime[h] = sum_i phi'_s(x_i) * Z P_s (x_i - mu)
    psi[h]       = sum_i phi_s(x_i)

where ``phi_s`` uses width ``gamma_sigma`` and ``P_s = (Sigma + sigma^2 I)^-1``.
Memory is O(H S^2) regardless of the number of rows.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import islice

import numpy as np

from . import container
from .errors import ConfigError, DataError
from .model import BaseMeasure
from .rff import RffBasis

DEFAULT_BATCH = 8192
THREADS_ENV = "TGP_THREADS"


@dataclass(frozen=True)
class NoiseGrid:
    """Evenly spaced noise levels ``(h - 1) / H * sigma_max`` for ``h = 1..H``."""

    sigma_max: float
    H: int

    def __post_init__(self):
        if int(self.H) != self.H or self.H < 1:
            raise ConfigError(f"H must be a positive integer, got {self.H}")
        if self.sigma_max < 0 or (self.H > 1 and self.sigma_max == 0):
            raise ConfigError(f"sigma_max must be positive, got {self.sigma_max}")
        object.__setattr__(self, "H", int(self.H))
        object.__setattr__(self, "sigma_max", float(self.sigma_max))

    @classmethod
    def zero(cls) -> "NoiseGrid":
        """The single-level grid ``{0}`` used by the plain learners."""
        return cls(0.0, 1)

    @property
    def levels(self) -> tuple[float, ...]:
        return tuple((h - 1) / self.H * self.sigma_max for h in range(1, self.H + 1))


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1")
    return n


def config_key(basis: RffBasis, base: BaseMeasure, levels, with_phi: bool) -> str:
    h = hashlib.sha256(basis.checksum().encode())
    h.update(np.float64(basis.gamma).tobytes())
    h.update(base.mu.astype("<f8").tobytes())
    h.update(base.Sigma.astype("<f8").tobytes())
    h.update(np.asarray(levels, dtype="<f8").tobytes())
    h.update(b"phi" if with_phi else b"nophi")
    return h.hexdigest()


class SuffStats:
    """Accumulators for one (basis, base, grid) configuration.

    Single writer: call :func:`accumulate` from one thread at a time and
    parallelize by giving each shard its own accumulator, then
    :func:`merge`.
    """

    def __init__(self, levels, S, d, key, with_phi, N=0,
                 Phi_prime=None, Phi=None, psi_prime=None, psi=None):
        self.levels = tuple(float(s) for s in levels)
        self.S = int(S)
        self.d = int(d)
        self.key = key
        self.with_phi = bool(with_phi)
        H = len(self.levels)
        self.N = int(N)
        self.Phi_prime = np.zeros((H, S, S)) if Phi_prime is None else Phi_prime
        self.psi_prime = np.zeros((H, S)) if psi_prime is None else psi_prime
        self.psi = np.zeros((H, S)) if psi is None else psi
        if with_phi:
            self.Phi = np.zeros((H, S, S)) if Phi is None else Phi
        else:
            self.Phi = None

    @classmethod
    def empty(cls, basis: RffBasis, base: BaseMeasure, grid: NoiseGrid | None = None,
              with_phi: bool | None = None) -> "SuffStats":
        grid = NoiseGrid.zero() if grid is None else grid
        levels = grid.levels
        if with_phi is None:
            with_phi = levels != (0.0,)
        return cls(levels, basis.S, basis.d, config_key(basis, base, levels, with_phi), with_phi)

    @property
    def H(self) -> int:
        return len(self.levels)

    def level_index(self, sigma: float) -> int:
        for h, s in enumerate(self.levels):
            if s == sigma:
                return h
        raise ConfigError(f"sigma={sigma} is not on the accumulated grid {list(self.levels)}")

    def copy(self) -> "SuffStats":
        return SuffStats(self.levels, self.S, self.d, self.key, self.with_phi, self.N,
                         self.Phi_prime.copy(), None if self.Phi is None else self.Phi.copy(),
                         self.psi_prime.copy(), self.psi.copy())

    def compatible(self, other: "SuffStats") -> bool:
        return self.key == other.key and self.levels == other.levels and self.S == other.S

    def _add(self, local):
        Pp, P, pp, p, n = local
        self.Phi_prime += Pp
        if self.Phi is not None:
            self.Phi += P
        self.psi_prime += pp
        self.psi += p
        self.N += n

    def save(self, path) -> None:
        """Write a checkpoint; identical accumulation order gives identical bytes."""
        arrays = {"Phi_prime": self.Phi_prime, "psi_prime": self.psi_prime, "psi": self.psi,
                  "levels": np.asarray(self.levels)}
        if self.Phi is not None:
            arrays["Phi"] = self.Phi
        meta = {"format_version": 1, "N": self.N, "S": self.S, "d": self.d,
                "config_key": self.key, "with_phi": self.with_phi}
        container.write(path, "tgp-suffstats", meta, arrays)

    @classmethod
    def load(cls, path) -> "SuffStats":
        meta, arrays = container.read(path, "tgp-suffstats")
        if meta.get("format_version") != 1:
            raise DataError(f"unsupported checkpoint version {meta.get('format_version')}")
        return cls(arrays["levels"].tolist(), meta["S"], meta["d"], meta["config_key"],
                   meta["with_phi"], meta["N"], arrays["Phi_prime"], arrays.get("Phi"),
                   arrays["psi_prime"], arrays["psi"])


def _local_sums(X, basis: RffBasis, base: BaseMeasure, levels, with_phi):
    """Per-batch statistics, summed in double precision."""
    H, S = len(levels), basis.S
    Pp = np.empty((H, S, S))
    P = np.empty((H, S, S)) if with_phi else None
    pp = np.empty((H, S))
    p = np.empty((H, S))
    for h, sigma in enumerate(levels):
        F, Fp = basis.phi_both(X, sigma)
        Pp[h] = Fp.T @ Fp
        if with_phi:
            P[h] = F.T @ F
        # Z P_sigma (x_i - mu), one row per point
        proj = ((X - base.mu) @ base.precision(sigma)) @ basis.Z.T
        pp[h] = np.einsum("ij,ij->j", Fp, proj)
        p[h] = F.sum(axis=0)
    return Pp, P, pp, p, X.shape[0]


def _check(stats: SuffStats, basis: RffBasis, base: BaseMeasure):
    if stats.S != basis.S or stats.d != basis.d:
        raise ConfigError("accumulator and basis sizes differ")
    if stats.key != config_key(basis, base, stats.levels, stats.with_phi):
        raise ConfigError("accumulator was configured for another basis or noise grid")


def _batches(X, batch_size):
    for i in range(0, X.shape[0], batch_size):
        yield X[i:i + batch_size]


def accumulate(stats: SuffStats, batch, basis: RffBasis, base: BaseMeasure,
               batch_size: int = DEFAULT_BATCH, threads: int = 1) -> SuffStats:
    """Add the rows of ``batch`` into ``stats`` (in place) and return it.

    Rows are processed in blocks of ``batch_size``; each block's sums are
    formed locally and folded into the accumulator in block order, so the
    result does not depend on ``threads``.
    """
    _check(stats, basis, base)
    X = np.asarray(batch, dtype=float)
    if X.size == 0:
        return stats
    X = np.atleast_2d(X)
    if X.shape[1] != basis.d:
        raise ConfigError(f"rows have dimension {X.shape[1]}, basis expects {basis.d}")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    for sigma in stats.levels:
        base.precision(sigma)  # warm the cache before any worker threads start

    def work(block):
        return _local_sums(block, basis, base, stats.levels, stats.with_phi)

    blocks = _batches(X, batch_size)
    if threads <= 1:
        for block in blocks:
            stats._add(work(block))
        return stats
    with ThreadPoolExecutor(max_workers=threads) as pool:
        while True:
            window = list(islice(blocks, threads))
            if not window:
                break
            for local in pool.map(work, window):
                stats._add(local)
    return stats


def merge(a: SuffStats, b: SuffStats) -> SuffStats:
    """Componentwise sum of two accumulators with the same configuration."""
    if not a.compatible(b) or a.with_phi != b.with_phi:
        raise ConfigError("cannot merge accumulators with different configurations")
    return SuffStats(a.levels, a.S, a.d, a.key, a.with_phi, a.N + b.N,
                     a.Phi_prime + b.Phi_prime,
                     None if a.Phi is None else a.Phi + b.Phi,
                     a.psi_prime + b.psi_prime, a.psi + b.psi)


def collect(data, basis: RffBasis, base: BaseMeasure, grid: NoiseGrid | None = None,
            batch_size: int = DEFAULT_BATCH, threads: int = 1,
            with_phi: bool | None = None) -> SuffStats:
    """One pass over ``data`` producing a fresh accumulator."""
    stats = SuffStats.empty(basis, base, grid, with_phi=with_phi)
    return accumulate(stats, data, basis, base, batch_size=batch_size, threads=threads)
