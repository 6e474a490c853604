"""Closed-form and iterative learners for the tilted density.

All three score-matching learners reduce to one S x S SPD solve over
the statistics in :mod:`tgp.suffstats`:

* ``fit_fd``   -- plain Fisher-divergence solution.
* ``fit_ncfd`` -- the same objective averaged over a grid of Gaussian
  noise levels, with the noise expectations taken analytically.
* ``fit_fvpd`` -- Gaussian posterior over ``theta`` and the resulting
  approximate predictive density.

``fit_map`` is the importance-sampled gradient-ascent baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConfigError, NumericalError
from .model import BaseMeasure, FvpdForm, TgpModel
from .rff import RffBasis
from .solvers import SolverOptions, lyapunov_kron, solve_lyapunov, solve_with
from .suffstats import DEFAULT_BATCH, NoiseGrid, SuffStats, collect

log = logging.getLogger(__name__)


def _positive(name, value):
    if not (np.isfinite(value) and value > 0):
        raise ConfigError(f"{name} must be positive and finite, got {value}")


@dataclass(frozen=True, eq=False)
class NoiseKernels:
    """Gaussian damping factors at one noise level.

    ``delta[s] = exp(-0.5 r^2 ||z_s||^2)`` and
    ``plus/minus[s, t] = exp(-0.5 r^2 ||z_s +/- z_t||^2)`` with
    ``r = sigma / gamma_sigma``.
    """

    sigma: float
    delta: np.ndarray
    plus: np.ndarray
    minus: np.ndarray


def _pair_sqnorms(Z: np.ndarray, metric: np.ndarray | None = None):
    """``(z_s + z_t)' A (z_s + z_t)`` and ``(z_s - z_t)' A (z_s - z_t)`` for all pairs."""
    G = Z @ Z.T if metric is None else Z @ metric @ Z.T
    G = 0.5 * (G + G.T)
    q = np.diag(G).copy()
    s = q[:, None] + q[None, :]
    plus = np.maximum(s + 2.0 * G, 0.0)
    minus = np.maximum(s - 2.0 * G, 0.0)
    np.fill_diagonal(minus, 0.0)
    return q, plus, minus


def noise_kernels(basis: RffBasis, sigma: float) -> NoiseKernels:
    if sigma < 0:
        raise ConfigError(f"noise level must be >= 0, got {sigma}")
    S = basis.S
    if sigma == 0:
        ones = np.ones((S, S))
        return NoiseKernels(0.0, np.ones(S), ones, ones.copy())
    r2 = (sigma / basis.width(sigma)) ** 2
    q, plus, minus = _pair_sqnorms(basis.Z)
    return NoiseKernels(float(sigma), np.exp(-0.5 * r2 * q), np.exp(-0.5 * r2 * plus),
                        np.exp(-0.5 * r2 * minus))


@dataclass(frozen=True, eq=False)
class NoiseExpectations:
    """Expectations over ``y = x + xi``, ``xi ~ N(0, sigma^2 I)``."""

    E_phi: np.ndarray
    E_phi_prime: np.ndarray
    E_outer: np.ndarray
    E_cross: np.ndarray


def noise_expectations(basis: RffBasis, base: BaseMeasure, x, sigma: float,
                       kernels: NoiseKernels | None = None) -> NoiseExpectations:
    """Closed-form noise expectations of the features at one point.

    * ``E[phi_s(y)] = delta * phi_s(x)``
    * ``E[phi'_s(y)] = delta * phi'_s(x)``
    * ``E[phi'_s(y) phi'_s(y)^T] = 0.5 (minus - plus) * phi phi^T + 0.5 (minus + plus) * phi' phi'^T``
    * ``E[(Z P_s xi) * phi'_s(y)] = -(sigma^2 / gamma_s) delta * diag(Z P_s Z^T) * phi_s(x)``
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != basis.d:
        raise ConfigError(f"expected a point of dimension {basis.d}, got {x.shape[0]}")
    k = noise_kernels(basis, sigma) if kernels is None else kernels
    if k.sigma != sigma:
        raise ConfigError("kernels were built for a different noise level")
    f = basis.phi(x, sigma)
    fp = basis.phi_prime(x, sigma)
    outer = 0.5 * (k.minus - k.plus) * np.outer(f, f) + 0.5 * (k.minus + k.plus) * np.outer(fp, fp)
    if sigma == 0:
        cross = np.zeros(basis.S)
    else:
        zPz = np.einsum("sd,de,se->s", basis.Z, base.precision(sigma), basis.Z)
        cross = -(sigma**2 / basis.width(sigma)) * k.delta * zPz * f
    return NoiseExpectations(k.delta * f, k.delta * fp, outer, cross)


def mgf_moments(basis: RffBasis, base: BaseMeasure) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of ``phi(x)`` under ``x ~ N(mu, Sigma)``.

    Returns ``(mu_phi, Sigma_phi)``; both are exact moments, symmetrized.
    """
    g2 = basis.gamma**2
    q, plus, minus = _pair_sqnorms(basis.Z, base.Sigma)
    Dp = np.exp(-0.5 * plus / g2)
    Dm = np.exp(-0.5 * minus / g2)
    f = basis.phi(base.mu)
    fp = basis.phi_prime(base.mu)
    mu_phi = np.exp(-0.5 * q / g2) * f
    Sigma_phi = (0.5 * (Dm + Dp) * np.outer(f, f) + 0.5 * (Dm - Dp) * np.outer(fp, fp)
                 - np.outer(mu_phi, mu_phi))
    return mu_phi, 0.5 * (Sigma_phi + Sigma_phi.T)


def _level0(stats: SuffStats) -> int:
    if stats.N == 0:
        raise ConfigError("sufficient statistics are empty (N = 0)")
    return stats.level_index(0.0)


def _fd_system(stats: SuffStats, basis: RffBasis):
    """``(Z Z^T * Phi', gamma psi' + ||Z||^2 * psi)`` at sigma = 0."""
    h = _level0(stats)
    ZZ = basis.Z @ basis.Z.T
    A = ZZ * stats.Phi_prime[h]
    b = basis.gamma * stats.psi_prime[h] + basis.sqnorms * stats.psi[h]
    return ZZ, A, b


def _meta(algorithm, stats, lam, **extra):
    return {"algorithm": algorithm, "lam": float(lam), "N": int(stats.N), **extra}


def fit_fd(stats: SuffStats, basis: RffBasis, base: BaseMeasure, lam: float = 0.1,
           solver: SolverOptions = SolverOptions()) -> TgpModel:
    """``theta = (lam gamma^2 I + Z Z^T * Phi')^-1 (gamma psi' + ||Z||^2 * psi)``."""
    _positive("lam", lam)
    _, A, b = _fd_system(stats, basis)
    theta = solve_with(solver, A, b, ridge=lam * basis.gamma**2)
    return TgpModel(basis, base, theta=theta, meta=_meta("fd", stats, lam))


def fit_ncfd(stats: SuffStats, basis: RffBasis, base: BaseMeasure, lam: float = 0.1,
             solver: SolverOptions = SolverOptions(),
             kernels: list[NoiseKernels] | None = None) -> TgpModel:
    """Noise-conditional solution averaged over the accumulated noise grid.

    The system ``(lam H I + Z Z^T * A) theta = b`` is multiplied through
    by ``gamma^2`` (solution unchanged) so that a grid of ``{0}`` gives
    exactly the plain Fisher-divergence system.
    """
    _positive("lam", lam)
    if stats.N == 0:
        raise ConfigError("sufficient statistics are empty (N = 0)")
    if stats.levels[0] != 0.0:
        raise ConfigError("noise grid must start at sigma = 0")
    S, g = basis.S, basis.gamma
    if kernels is None:
        kernels = [noise_kernels(basis, s) for s in stats.levels]
    if [k.sigma for k in kernels] != list(stats.levels):
        raise ConfigError("noise kernels do not match the accumulated grid")
    A = np.zeros((S, S))
    b = np.zeros(S)
    for h, (sigma, k) in enumerate(zip(stats.levels, kernels)):
        ratio = g / basis.width(sigma)  # gamma / gamma_sigma, exactly 1 at sigma = 0
        if sigma == 0:
            A += ratio**2 * stats.Phi_prime[h]
            b += (g * ratio) * stats.psi_prime[h]
            b += ratio**2 * basis.sqnorms * stats.psi[h]
            continue
        if stats.Phi is None:
            raise ConfigError("noise levels above zero need the Phi accumulators")
        A += (0.5 * ratio**2) * ((k.minus + k.plus) * stats.Phi_prime[h]
                                 + (k.minus - k.plus) * stats.Phi[h])
        P = base.precision(sigma)
        shrink = np.eye(basis.d) - sigma**2 * P
        eig = np.linalg.eigvalsh(0.5 * (shrink + shrink.T))
        if eig.min() < -1e-12:
            raise NumericalError("I - sigma^2 Sigma_sigma^-1 is not positive semidefinite")
        qs = np.einsum("sd,de,se->s", basis.Z, shrink, basis.Z)
        b += (g * ratio) * (k.delta * stats.psi_prime[h])
        b += ratio**2 * (qs * k.delta * stats.psi[h])
    ZZ = basis.Z @ basis.Z.T
    theta = solve_with(solver, ZZ * A, b, ridge=lam * stats.H * g**2)
    meta = _meta("ncfd", stats, lam, sigma_grid=stats.levels)
    return TgpModel(basis, base, theta=theta, meta=meta)


@dataclass(frozen=True, eq=False)
class FvpdPosterior:
    """Gaussian posterior over ``theta`` and the predictive parameters."""

    mu_hat: np.ndarray
    precision_hat: np.ndarray
    mu_phi: np.ndarray
    Sigma_phi: np.ndarray
    m: np.ndarray
    M: np.ndarray
    eta: float

    @property
    def Sigma_hat(self) -> np.ndarray:
        return linalg.cho_solve(linalg.cho_factor(self.precision_hat), np.eye(len(self.mu_hat)))


def fvpd_posterior(stats: SuffStats, basis: RffBasis, base: BaseMeasure, lam: float,
                   eta: float, solver: SolverOptions = SolverOptions()) -> FvpdPosterior:
    _positive("lam", lam)
    _positive("eta", eta)
    g2 = basis.gamma**2
    _, A, b = _fd_system(stats, basis)
    mu_hat = solve_with(solver, A, b, ridge=lam * g2 * eta)
    precision = A / (g2 * eta)
    precision[np.diag_indices_from(precision)] += lam
    precision = 0.5 * (precision + precision.T)
    mu_phi, Sigma_phi = mgf_moments(basis, base)
    m = mu_phi - precision @ mu_hat
    M = Sigma_phi + precision
    return FvpdPosterior(mu_hat, precision, mu_phi, Sigma_phi, m, 0.5 * (M + M.T), float(eta))


def fit_fvpd(stats: SuffStats, basis: RffBasis, base: BaseMeasure, lam: float = 0.1,
             eta: float | None = None, solver: SolverOptions = SolverOptions()) -> TgpModel:
    """Variational predictive density; ``eta`` defaults to ``1 / gamma^2``."""
    eta = 1.0 / basis.gamma**2 if eta is None else eta
    post = fvpd_posterior(stats, basis, base, lam, eta, solver)
    try:
        cf = linalg.cho_factor(post.M, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(
            "predictive matrix M is not positive definite; try a larger eta") from exc
    M_inv = linalg.cho_solve(cf, np.eye(basis.S))
    M_inv = 0.5 * (M_inv + M_inv.T)
    meta = _meta("fvpd", stats, lam, eta=float(eta))
    return TgpModel(basis, base, fvpd=FvpdForm(M_inv, post.m), meta=meta)


def _feature_sum(X, basis, batch_size=DEFAULT_BATCH):
    total = np.zeros(basis.S)
    for i in range(0, X.shape[0], batch_size):
        total += basis.phi(X[i:i + batch_size]).sum(axis=0)
    return total


def tilted_feature_mean(F: np.ndarray, theta: np.ndarray, block: int = 256) -> np.ndarray:
    """``sum_j w_j F_j`` with ``w = softmax(F theta)``.

    Uses a running maximum so every exponent is <= 0; the matrix is
    streamed once in cache-sized blocks.
    """
    total = np.zeros(F.shape[1])
    top = -np.inf
    mass = 0.0
    for i in range(0, F.shape[0], block):
        Fb = F[i:i + block]
        u = Fb @ theta
        ub = u.max()
        if ub > top:
            shrink = np.exp(top - ub)
            total *= shrink
            mass *= shrink
            top = ub
        e = np.exp(u - top)
        mass += e.sum()
        total += e @ Fb
    return total / mass


@dataclass(frozen=True, eq=False)
class MapTrace:
    """Final diagnostics of a MAP run."""

    psi1: np.ndarray
    direction: np.ndarray
    step: float
    iters: int


def fit_map(data, basis: RffBasis, base: BaseMeasure, lam: float = 0.1,
            step: float | None = None, iters: int = 10_000, mc_samples: int = 100_000,
            seed: int = 0, theta0=None, return_trace: bool = False):
    """Gradient ascent on the log posterior with a fixed importance sample.

    ``theta <- (1 - step lam) theta + step (psi1 - N psi2)`` where
    ``psi2`` is the softmax-weighted mean of ``phi`` over ``mc_samples``
    draws from the base, drawn once. The default step ``1 / (N + lam)``
    is below ``2 / L`` since ``||phi||^2 <= 2`` bounds the curvature by
    ``2 N + lam``.
    """
    X = np.atleast_2d(np.asarray(data, dtype=float))
    N = X.shape[0]
    _positive("lam", lam)
    if int(iters) != iters or iters < 1:
        raise ConfigError(f"iters must be a positive integer, got {iters}")
    if int(mc_samples) != mc_samples or mc_samples < 1:
        raise ConfigError(f"mc_samples must be a positive integer, got {mc_samples}")
    step = 1.0 / (N + lam) if step is None else float(step)
    if step < 0:
        raise ConfigError(f"step must be >= 0, got {step}")
    psi1 = _feature_sum(X, basis)
    rng = np.random.Generator(np.random.PCG64(seed))
    zeta = base.sample(int(mc_samples), rng)
    F = np.empty((zeta.shape[0], basis.S))
    for i in range(0, zeta.shape[0], DEFAULT_BATCH):
        F[i:i + DEFAULT_BATCH] = basis.phi(zeta[i:i + DEFAULT_BATCH])
    del zeta
    theta = np.zeros(basis.S) if theta0 is None else np.array(theta0, dtype=float)
    decay = 1.0 - step * lam
    for _ in range(int(iters)):
        theta = decay * theta + step * (psi1 - N * tilted_feature_mean(F, theta))
    direction = psi1 - N * tilted_feature_mean(F, theta) - lam * theta
    model = TgpModel(basis, base, theta=theta,
                     meta={"algorithm": "map", "lam": float(lam), "N": N,
                           "step": step, "iters": int(iters), "mc_samples": int(mc_samples)})
    if return_trace:
        return model, MapTrace(psi1, direction, step, int(iters))
    return model


def update_base_mu(x_mean, phi_prime_mean, theta, Sigma, basis: RffBasis) -> np.ndarray:
    """``mu = xbar - (1/gamma) Sigma Z^T (theta * mean_i phi'(x_i))``."""
    x_mean = np.asarray(x_mean, dtype=float).reshape(-1)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    phi_prime_mean = np.asarray(phi_prime_mean, dtype=float).reshape(-1)
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    if x_mean.shape[0] != basis.d or theta.shape[0] != basis.S or phi_prime_mean.shape[0] != basis.S:
        raise ConfigError("dimension mismatch in mean update")
    return x_mean - Sigma @ (basis.Z.T @ (theta * phi_prime_mean)) / basis.gamma


def lyapunov_terms(data, mu, theta, basis: RffBasis):
    """``(Sigma_bar, Upsilon, Q)`` of the covariance update."""
    X = np.atleast_2d(np.asarray(data, dtype=float))
    N = X.shape[0]
    R = X - np.asarray(mu, dtype=float)
    Sigma_bar = R.T @ R / N
    Ups = (basis.phi_prime(X) * theta).T @ R / N
    ZU = basis.Z.T @ Ups
    Q = 2.0 * np.eye(basis.d) + (ZU + ZU.T) / basis.gamma
    return Sigma_bar, Ups, Q


def update_base_sigma(data, mu, theta, basis: RffBasis) -> np.ndarray:
    """Minimize the Fisher objective over ``Sigma`` given ``mu`` and ``theta``."""
    Sigma_bar, _, Q = lyapunov_terms(data, mu, theta, basis)
    return solve_lyapunov(Sigma_bar, Q)


def fit_fd_with_base(data, basis: RffBasis, base: BaseMeasure, lam: float = 0.1,
                     rounds: int = 5, solver: SolverOptions = SolverOptions(),
                     batch_size: int = DEFAULT_BATCH) -> TgpModel:
    """Alternate ``fit_fd`` with the closed-form ``mu`` and ``Sigma`` updates.

    Each round needs a fresh pass over the data because ``psi'``
    depends on the base measure.
    """
    X = np.atleast_2d(np.asarray(data, dtype=float))
    if int(rounds) != rounds or rounds < 1:
        raise ConfigError("rounds must be a positive integer")
    x_mean = X.mean(axis=0)
    model = None
    for r in range(int(rounds)):
        stats = collect(X, basis, base, NoiseGrid.zero(), batch_size=batch_size)
        model = fit_fd(stats, basis, base, lam, solver)
        theta = model.theta
        fp_mean = _feature_prime_mean(X, basis, batch_size)
        mu = update_base_mu(x_mean, fp_mean, theta, base.Sigma, basis)
        Sigma = update_base_sigma(X, mu, theta, basis)
        base = BaseMeasure(mu, Sigma)
        log.debug("base update round %d done", r + 1)
    stats = collect(X, basis, base, NoiseGrid.zero(), batch_size=batch_size)
    model = fit_fd(stats, basis, base, lam, solver)
    return model.with_meta(base_rounds=int(rounds))


def _feature_prime_mean(X, basis, batch_size=DEFAULT_BATCH):
    total = np.zeros(basis.S)
    for i in range(0, X.shape[0], batch_size):
        total += basis.phi_prime(X[i:i + batch_size]).sum(axis=0)
    return total / X.shape[0]


__all__ = [
    "NoiseKernels", "NoiseExpectations", "FvpdPosterior", "MapTrace",
    "noise_kernels", "noise_expectations", "mgf_moments",
    "fit_fd", "fit_ncfd", "fvpd_posterior", "fit_fvpd", "fit_map", "tilted_feature_mean",
    "update_base_mu", "update_base_sigma", "lyapunov_terms", "lyapunov_kron",
    "fit_fd_with_base",
]
