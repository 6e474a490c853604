"""The GP-tilted density, its score, and data-driven defaults.

A fitted model is

    log q(x | sigma) = theta . phi_sigma(x) + log N(x | mu, Sigma + sigma^2 I) + const

or, for models produced by the variational predictive learner,

    log q(x) = 0.5 phi(x)' M^-1 phi(x) - phi(x)' M^-1 m + log N(x | mu, Sigma) + const.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .errors import ConfigError, DataError, NumericalError
from .rff import RffBasis

LOG_2PI = float(np.log(2.0 * np.pi))


class BaseMeasure:
    """Gaussian base ``N(mu, Sigma)`` with factorizations cached per noise level.

    ``cov(sigma)`` is ``Sigma + sigma^2 I``. Factorizations are computed
    lazily and memoized on the exact float value of ``sigma``.
    """

    def __init__(self, mu, Sigma):
        mu = np.array(mu, dtype=float).reshape(-1)
        Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
        d = mu.shape[0]
        if Sigma.shape != (d, d):
            raise ConfigError(f"Sigma must be {d}x{d}, got {Sigma.shape}")
        asym = np.abs(Sigma - Sigma.T).max()
        if asym > 1e-10 * max(np.abs(Sigma).max(), 1e-300):
            raise NumericalError("Sigma is not symmetric")
        Sigma = 0.5 * (Sigma + Sigma.T)
        mu.setflags(write=False)
        Sigma.setflags(write=False)
        self.mu = mu
        self.Sigma = Sigma
        self._cache: dict[float, tuple[np.ndarray, np.ndarray, float]] = {}
        self._factor(0.0)

    @property
    def d(self) -> int:
        return self.mu.shape[0]

    def cov(self, sigma: float = 0.0) -> np.ndarray:
        if sigma == 0:
            return self.Sigma
        return self.Sigma + sigma**2 * np.eye(self.d)

    def _factor(self, sigma: float):
        key = float(sigma)
        hit = self._cache.get(key)
        if hit is None:
            C = self.cov(key)
            try:
                L = np.linalg.cholesky(C)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(
                    f"base covariance at sigma={key} is not positive definite"
                ) from exc
            Linv = linalg.solve_triangular(L, np.eye(self.d), lower=True)
            P = Linv.T @ Linv
            P = 0.5 * (P + P.T)
            logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
            L.setflags(write=False)
            P.setflags(write=False)
            hit = (L, P, logdet)
            self._cache[key] = hit
        return hit

    def chol(self, sigma: float = 0.0) -> np.ndarray:
        """Lower Cholesky factor of ``Sigma + sigma^2 I``."""
        return self._factor(sigma)[0]

    def precision(self, sigma: float = 0.0) -> np.ndarray:
        """Inverse of ``Sigma + sigma^2 I``."""
        return self._factor(sigma)[1]

    def logpdf(self, x, sigma: float = 0.0) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.d:
            raise ConfigError(f"expected points of dimension {self.d}, got shape {x.shape}")
        L, _, logdet = self._factor(sigma)
        R = linalg.solve_triangular(L, (X - self.mu).T, lower=True)
        out = -0.5 * (np.sum(R * R, axis=0) + logdet + self.d * LOG_2PI)
        return float(out[0]) if single else out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mu + rng.standard_normal((n, self.d)) @ self.chol().T

    def __repr__(self):
        return f"BaseMeasure(d={self.d})"


@dataclass(frozen=True)
class Hyperparams:
    """Kernel width, prior precision, feature count, noise grid and tempering."""

    gamma: float
    lam: float = 0.1
    S: int = 1000
    sigma_max: float = 1.0
    H: int = 10
    eta: float = 1.0

    def __post_init__(self):
        for name in ("gamma", "lam", "sigma_max", "eta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive and finite, got {v}")
        for name in ("S", "H"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v}")
            object.__setattr__(self, name, int(v))


@dataclass(frozen=True, eq=False)
class FvpdForm:
    """Quadratic-form tilt ``0.5 phi' M_inv phi - phi' M_inv m``."""

    M_inv: np.ndarray
    m: np.ndarray
    M_inv_m: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        M_inv = np.asarray(self.M_inv, dtype=float)
        m = np.asarray(self.m, dtype=float).reshape(-1)
        if M_inv.shape != (m.shape[0], m.shape[0]):
            raise ConfigError("M_inv and m sizes disagree")
        object.__setattr__(self, "M_inv", M_inv)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "M_inv_m", M_inv @ m)


@dataclass(frozen=True, eq=False)
class TgpModel:
    """A fitted tilted density.

    Exactly one of ``theta`` and ``fvpd`` is set. ``meta`` carries the
    algorithm tag, ``lam``, ``eta``, the noise grid ``sigma_grid``, the
    row count ``N`` and the centering ``offset`` of the training data.
    """

    basis: RffBasis
    base: BaseMeasure
    theta: np.ndarray | None = None
    fvpd: FvpdForm | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.theta is None) == (self.fvpd is None):
            raise ConfigError("model needs exactly one of theta or fvpd")
        if self.basis.d != self.base.d:
            raise ConfigError("basis and base measure dimensions differ")
        if self.theta is not None:
            theta = np.array(self.theta, dtype=float).reshape(-1)
            if theta.shape[0] != self.basis.S:
                raise ConfigError(f"theta has {theta.shape[0]} entries, basis has {self.basis.S}")
            theta.setflags(write=False)
            object.__setattr__(self, "theta", theta)
        elif self.fvpd.m.shape[0] != self.basis.S:
            raise ConfigError("predictive parameters do not match basis size")
        meta = dict(self.meta)
        meta.setdefault("sigma_grid", (0.0,))
        meta["sigma_grid"] = tuple(float(s) for s in meta["sigma_grid"])
        meta.setdefault("offset", (0.0,) * self.basis.d)
        meta["offset"] = tuple(float(v) for v in meta["offset"])
        object.__setattr__(self, "meta", meta)

    @property
    def d(self) -> int:
        return self.basis.d

    @property
    def algorithm(self) -> str:
        return self.meta.get("algorithm", "unknown")

    @property
    def is_fvpd(self) -> bool:
        return self.fvpd is not None

    def with_meta(self, **kw) -> "TgpModel":
        return replace(self, meta={**self.meta, **kw})

    def _check_sigma(self, sigma):
        if sigma < 0:
            raise ConfigError(f"noise level must be >= 0, got {sigma}")
        if self.is_fvpd and sigma != 0:
            raise ConfigError("predictive-form models are only defined at sigma = 0")

    def _require_theta(self):
        if self.is_fvpd:
            raise ConfigError("score and Hessian are not available for predictive-form models")

    def log_tilt(self, x, sigma: float = 0.0):
        """Exponent of the tilt factor at ``x``."""
        self._check_sigma(sigma)
        F = self.basis.phi(x, sigma)
        if self.theta is not None:
            out = F @ self.theta
        else:
            F2 = np.atleast_2d(F)
            quad = np.einsum("ij,ij->i", F2 @ self.fvpd.M_inv, F2)
            out = 0.5 * quad - F2 @ self.fvpd.M_inv_m
            if F.ndim == 1:
                out = out[0]
        return float(out) if np.ndim(out) == 0 else out

    def log_unnorm_density(self, x, sigma: float = 0.0):
        """Unnormalized log density (tilt plus log base density)."""
        return self.log_tilt(x, sigma) + self.base.logpdf(x, sigma)

    def score(self, x, sigma: float = 0.0) -> np.ndarray:
        """``grad_x log q(x | sigma)``."""
        self._require_theta()
        self._check_sigma(sigma)
        x = np.asarray(x, dtype=float)
        X = np.atleast_2d(x)
        Fp = self.basis.phi_prime(X, sigma)
        g = (Fp * self.theta) @ self.basis.Z / self.basis.width(sigma)
        g -= (X - self.base.mu) @ self.base.precision(sigma)
        return g[0] if x.ndim == 1 else g

    def hessian_trace(self, x, sigma: float = 0.0):
        """``trace(grad^2_x log q(x | sigma))``, using phi'' = -phi."""
        self._require_theta()
        self._check_sigma(sigma)
        x = np.asarray(x, dtype=float)
        F = self.basis.phi(np.atleast_2d(x), sigma)
        w = self.basis.width(sigma)
        out = -(F @ (self.theta * self.basis.sqnorms)) / w**2
        out -= np.trace(self.base.precision(sigma))
        return float(out[0]) if x.ndim == 1 else out


def _data_matrix(data) -> np.ndarray:
    X = np.asarray(getattr(data, "rows", data), dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise DataError(f"data must be an (N, d) matrix, got shape {X.shape}")
    return X


def default_hyperparams(data, **overrides) -> Hyperparams:
    """Scott's-rule width and the default learner settings.

    ``gamma = N^(-1/(d+4)) sqrt(tr V / d)``, ``sigma_max = sqrt(tr V) / d``,
    ``S = 1000``, ``lam = 0.1``, ``H = 10``, ``eta = 1 / gamma^2``. Any
    field can be overridden by keyword; ``eta`` follows an overridden
    ``gamma`` unless it is overridden too.
    """
    X = _data_matrix(data)
    N, d = X.shape
    if N < 2:
        raise DataError("need at least two rows to estimate a covariance")
    V = np.atleast_2d(np.cov(X, rowvar=False))
    tr = float(np.trace(V))
    if not tr > 0:
        raise DataError("data has zero variance in every coordinate")
    gamma = overrides.pop("gamma", None)
    if gamma is None:
        gamma = N ** (-1.0 / (d + 4)) * np.sqrt(tr / d)
    params = dict(
        gamma=float(gamma),
        lam=0.1,
        S=1000,
        sigma_max=float(np.sqrt(tr) / d),
        H=10,
        eta=1.0 / float(gamma) ** 2,
    )
    unknown = set(overrides) - set(params)
    if unknown:
        raise ConfigError(f"unknown hyperparameters: {sorted(unknown)}")
    params.update({k: v for k, v in overrides.items() if v is not None})
    return Hyperparams(**params)


def empirical_base(data) -> BaseMeasure:
    """Sample mean and covariance, with a small diagonal jitter if needed."""
    X = _data_matrix(data)
    if X.shape[0] < 2:
        raise DataError("need at least two rows to estimate a covariance")
    mu = X.mean(axis=0)
    Sigma = np.atleast_2d(np.cov(X, rowvar=False))
    ev = np.linalg.eigvalsh(Sigma)
    if ev[0] > 1e-12 * max(ev[-1], 0.0):
        try:
            return BaseMeasure(mu, Sigma)
        except NumericalError:
            pass
    jitter = 1e-8 * float(np.mean(np.diag(Sigma)))
    try:
        if not jitter > 0:
            raise NumericalError("zero variance")
        return BaseMeasure(mu, Sigma + jitter * np.eye(Sigma.shape[0]))
    except NumericalError as exc:
        raise DataError("degenerate covariance: data is rank deficient") from exc
