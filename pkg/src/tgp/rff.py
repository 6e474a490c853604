"""Random Fourier features for the Gaussian kernel.

The feature map is

    phi_s(x) = sqrt(2/S) * cos(z_s . x / gamma_sigma + c_s)

with ``gamma_sigma = sqrt(gamma**2 + sigma**2)``. A single draw of
frequencies ``Z`` and phases ``c`` is shared by every noise level; the
level only changes the divisor applied to ``Z x``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError

TWO_PI = 2.0 * np.pi


def frequency_covariance(Sigma: np.ndarray) -> np.ndarray:
    """Rescale a data covariance to ``d * Sigma / trace(Sigma)``.

    The result has trace ``d`` and is used as the covariance of the
    frequency draws so the kernel follows the data's correlation.
    """
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    d = Sigma.shape[0]
    tr = np.trace(Sigma)
    if not tr > 0:
        raise ConfigError("frequency covariance needs a positive trace")
    return d * Sigma / tr


@dataclass(frozen=True, eq=False)
class RffBasis:
    """Frequencies, phases and kernel width of one feature map.

    Attributes:
        Z: Frequency matrix, shape ``(S, d)``; row ``s`` is ``z_s``.
        c: Phases in ``[0, 2*pi)``, shape ``(S,)``.
        gamma: Kernel width.
        seed: Seed the frequencies were drawn from (``None`` if supplied
            by hand).
        sigma_z: Covariance the frequencies were drawn from, or ``None``
            for the identity.
    """

    Z: np.ndarray
    c: np.ndarray
    gamma: float
    seed: int | None = None
    sigma_z: np.ndarray | None = None
    _sqnorms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Z = np.ascontiguousarray(np.atleast_2d(np.asarray(self.Z, dtype=float)))
        c = np.ascontiguousarray(np.asarray(self.c, dtype=float).reshape(-1))
        if Z.shape[0] < 1 or Z.shape[1] < 1:
            raise ConfigError("basis needs at least one frequency of dimension >= 1")
        if c.shape[0] != Z.shape[0]:
            raise ConfigError(f"{Z.shape[0]} frequencies but {c.shape[0]} phases")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if np.any(c < 0) or np.any(c >= TWO_PI):
            raise ConfigError("phases must lie in [0, 2*pi)")
        Z.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "gamma", float(self.gamma))
        sq = np.sum(Z * Z, axis=1)
        sq.setflags(write=False)
        object.__setattr__(self, "_sqnorms", sq)

    @property
    def S(self) -> int:
        return self.Z.shape[0]

    @property
    def d(self) -> int:
        return self.Z.shape[1]

    @property
    def scale(self) -> float:
        return float(np.sqrt(2.0 / self.S))

    @property
    def sqnorms(self) -> np.ndarray:
        """``(||z_1||^2, ..., ||z_S||^2)``."""
        return self._sqnorms

    def width(self, sigma: float = 0.0) -> float:
        """Noise-smoothed kernel width ``sqrt(gamma^2 + sigma^2)``."""
        if sigma < 0:
            raise ConfigError(f"noise level must be >= 0, got {sigma}")
        if sigma == 0:
            return self.gamma
        return float(np.sqrt(self.gamma**2 + sigma**2))

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(self.Z.astype("<f8").tobytes())
        h.update(self.c.astype("<f8").tobytes())
        return h.hexdigest()

    def _as_batch(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x.reshape(1, -1) if single else x
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ConfigError(f"expected points of dimension {self.d}, got shape {x.shape}")
        return X, single

    def angles(self, X: np.ndarray, sigma: float = 0.0) -> np.ndarray:
        """Arguments ``Z x / gamma_sigma + c`` for a batch ``(n, d)``."""
        return (X @ self.Z.T) / self.width(sigma) + self.c

    def phi(self, x, sigma: float = 0.0) -> np.ndarray:
        """Feature vector(s); ``(d,)`` -> ``(S,)`` and ``(n, d)`` -> ``(n, S)``."""
        X, single = self._as_batch(x)
        out = self.scale * np.cos(self.angles(X, sigma))
        return out[0] if single else out

    def phi_prime(self, x, sigma: float = 0.0) -> np.ndarray:
        """``-sqrt(2/S) sin(...)``; the second derivative is ``-phi``."""
        X, single = self._as_batch(x)
        out = -self.scale * np.sin(self.angles(X, sigma))
        return out[0] if single else out

    def phi_both(self, X: np.ndarray, sigma: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        """``(phi, phi_prime)`` for a batch, sharing one projection."""
        X, _ = self._as_batch(X)
        a = self.angles(X, sigma)
        return self.scale * np.cos(a), -self.scale * np.sin(a)


def sample_basis(
    d: int,
    S: int,
    gamma: float,
    sigma_z: np.ndarray | None = None,
    seed: int = 0,
) -> RffBasis:
    """Draw ``z_s ~ N(0, sigma_z)`` and ``c_s ~ Unif[0, 2*pi)``.

    The generator is numpy's PCG64 seeded with ``seed``; the same
    arguments always reproduce the same basis.
    """
    if int(d) != d or d < 1:
        raise ConfigError(f"dimension must be a positive integer, got {d}")
    if int(S) != S or S < 1:
        raise ConfigError(f"feature count must be a positive integer, got {S}")
    if not gamma > 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    d, S = int(d), int(S)
    rng = np.random.Generator(np.random.PCG64(seed))
    normals = rng.standard_normal((S, d))
    if sigma_z is None:
        Z = normals
    else:
        sigma_z = np.atleast_2d(np.asarray(sigma_z, dtype=float))
        if sigma_z.shape != (d, d):
            raise ConfigError(f"sigma_z must be {d}x{d}, got {sigma_z.shape}")
        if not np.allclose(sigma_z, sigma_z.T, rtol=1e-10, atol=0):
            raise NumericalError("sigma_z is not symmetric")
        try:
            L = np.linalg.cholesky(sigma_z)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("sigma_z is not positive definite") from exc
        Z = normals @ L.T
    c = TWO_PI * rng.random(S)
    c[c >= TWO_PI] = 0.0
    return RffBasis(Z=Z, c=c, gamma=gamma, seed=seed, sigma_z=sigma_z)


def kernel_estimate(basis: RffBasis, x, x2) -> float:
    """``phi(x) . phi(x2)``, an unbiased Monte-Carlo estimate of the kernel."""
    return float(basis.phi(x) @ basis.phi(x2))
