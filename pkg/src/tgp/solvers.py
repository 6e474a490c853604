"""Dense SPD solves and the Kronecker-form Lyapunov solve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConfigError, NumericalError

DIRECT_MAX_SIZE = 2048


@dataclass(frozen=True)
class SolverOptions:
    """``method`` is ``"auto"``, ``"direct"`` or ``"cg"``.

    ``auto`` factorizes directly up to ``DIRECT_MAX_SIZE`` unknowns and
    switches to Jacobi-preconditioned conjugate gradients above that.
    """

    method: str = "auto"
    tol: float = 1e-8
    max_iter: int | None = None

    def __post_init__(self):
        if self.method not in ("auto", "direct", "cg"):
            raise ConfigError(f"unknown solver method {self.method!r}")
        if not self.tol > 0:
            raise ConfigError(f"solver tolerance must be positive, got {self.tol}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")


def conjugate_gradient(A, b, tol=1e-8, max_iter=None, x0=None):
    """Jacobi-preconditioned CG for a dense SPD matrix.

    Stops once ``||A x - b|| <= tol * ||b||``. Returns ``(x, iterations)``.
    """
    n = b.shape[0]
    max_iter = 10 * n if max_iter is None else max_iter
    diag = np.diag(A).copy()
    if np.any(diag <= 0):
        raise NumericalError("matrix has a non-positive diagonal entry; not SPD")
    inv_diag = 1.0 / diag
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    target = tol * bnorm
    if np.linalg.norm(r) <= target:
        return x, 0
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if not pAp > 0:
            raise NumericalError("CG hit a non-positive curvature direction; not SPD")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= target:
            # recompute the true residual; the recursive one drifts
            r = b - A @ x
            if np.linalg.norm(r) <= target:
                return x, it
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NumericalError(f"CG did not reach tol={tol:g} within {max_iter} iterations")


def solve_spd(A, b, *, ridge=0.0, method="auto", tol=1e-8, max_iter=None) -> np.ndarray:
    """Solve ``(A + ridge I) x = b`` for symmetric positive definite ``A + ridge I``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ConfigError(f"system matrix shape {A.shape} does not match rhs length {n}")
    scale = max(np.abs(A).max(), 1e-300)
    if np.abs(A - A.T).max() > 1e-10 * scale:
        raise NumericalError("system matrix is not symmetric")
    if ridge:
        A = A + ridge * np.eye(n)
    if method == "auto":
        method = "direct" if n <= DIRECT_MAX_SIZE else "cg"
    if not np.any(b):
        return np.zeros(n)
    if method == "direct":
        try:
            factor = linalg.cho_factor(A, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise NumericalError("Cholesky factorization failed; system is not positive definite") from exc
        x = linalg.cho_solve(factor, b)
    elif method == "cg":
        # solve for b / scale so tiny right-hand sides cannot underflow inside CG
        b_scale = np.abs(b).max()
        bs = b / b_scale
        y, _ = conjugate_gradient(A, bs, tol=tol, max_iter=max_iter)
        resid = np.linalg.norm(A @ y - bs) / np.linalg.norm(bs)
        x = y * b_scale
        if resid > tol:
            raise NumericalError(f"CG residual {resid:.3g} exceeds tol {tol:g}")
    else:
        raise ConfigError(f"unknown solver method {method!r}")
    if not np.all(np.isfinite(x)):
        raise NumericalError("solve produced non-finite values")
    return x


def solve_with(options: SolverOptions, A, b, ridge=0.0) -> np.ndarray:
    return solve_spd(A, b, ridge=ridge, method=options.method, tol=options.tol,
                     max_iter=options.max_iter)


def lyapunov_kron(Sigma_bar, Q) -> np.ndarray:
    """Solve ``Sigma_bar X + X Sigma_bar = Q`` through its Kronecker form.

    ``vec(X) = (Sigma_bar kron I + I kron Sigma_bar)^-1 vec(Q)``; the
    linear system has ``d^2`` unknowns so the cost is O(d^6).
    """
    Sigma_bar = np.atleast_2d(np.asarray(Sigma_bar, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    d = Sigma_bar.shape[0]
    if Sigma_bar.shape != (d, d) or Q.shape != (d, d):
        raise ConfigError("Sigma_bar and Q must be square and of equal size")
    eye = np.eye(d)
    K = np.kron(Sigma_bar, eye) + np.kron(eye, Sigma_bar)
    try:
        vecX = np.linalg.solve(K, Q.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Kronecker system of the Lyapunov equation is singular") from exc
    X = vecX.reshape(d, d, order="F")
    return 0.5 * (X + X.T)


def solve_lyapunov(Sigma_bar, Q) -> np.ndarray:
    """Return ``Sigma`` whose inverse ``X`` solves ``Sigma_bar X + X Sigma_bar = Q``."""
    X = lyapunov_kron(Sigma_bar, Q)
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Lyapunov solution is not positive definite; Sigma is undefined") from exc
    Linv = linalg.solve_triangular(L, np.eye(X.shape[0]), lower=True)
    Sigma = Linv.T @ Linv
    return 0.5 * (Sigma + Sigma.T)
