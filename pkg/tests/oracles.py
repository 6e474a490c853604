"""Independent reference implementations used as test oracles.

Everything here is written as plain loops over points and features with
``math`` functions so it shares no code path with the package.
"""

import math

import numpy as np
from scipy import optimize


def phi_loop(Z, c, width, x):
    S = len(c)
    a = math.sqrt(2.0 / S)
    return np.array([a * math.cos(sum(Z[s][k] * x[k] for k in range(len(x))) / width + c[s])
                     for s in range(S)])


def phi_prime_loop(Z, c, width, x):
    S = len(c)
    a = math.sqrt(2.0 / S)
    return np.array([-a * math.sin(sum(Z[s][k] * x[k] for k in range(len(x))) / width + c[s])
                     for s in range(S)])


def fisher_objective(X, Z, c, gamma, mu, Sigma, lam):
    """Returns ``theta -> sum_i 0.5 ||grad log q(x_i)||^2 + tr hess log q(x_i)`` plus the ridge.

    Per-point gradient pieces are tabulated once with the scalar loops;
    the returned function only combines them with ``theta``.
    """
    P = np.linalg.inv(Sigma)
    S = len(c)
    rows = []
    for x in X:
        fp = phi_prime_loop(Z, c, gamma, x)
        f = phi_loop(Z, c, gamma, x)
        G = np.array([fp[s] * Z[s] / gamma for s in range(S)])  # S x d
        lap = np.array([-f[s] * float(Z[s] @ Z[s]) / gamma**2 for s in range(S)])
        rows.append((G, -P @ (x - mu), lap, -np.trace(P)))

    G = np.array([r[0] for r in rows])     # N x S x d
    g0 = np.array([r[1] for r in rows])    # N x d
    lap = np.array([r[2] for r in rows])   # N x S
    lap0 = sum(r[3] for r in rows)

    def objective(theta):
        grad = g0 + np.einsum("s,nsd->nd", theta, G)
        total = 0.5 * float(np.sum(grad * grad)) + float(np.sum(lap @ theta)) + lap0
        return total + 0.5 * lam * float(theta @ theta)

    return objective


def noise_expectations_loop(Z, c, gamma, mu, Sigma, x, sigma):
    """Noise expectations at one point, coded entry by entry from their definitions."""
    S, d = Z.shape
    w = math.sqrt(gamma**2 + sigma**2)
    r2 = (sigma / w) ** 2
    f = phi_loop(Z, c, w, x)
    fp = phi_prime_loop(Z, c, w, x)
    P = np.linalg.inv(Sigma + sigma**2 * np.eye(d))
    delta = np.array([math.exp(-0.5 * r2 * float(Z[s] @ Z[s])) for s in range(S)])
    outer = np.empty((S, S))
    for s in range(S):
        for t in range(S):
            dm = math.exp(-0.5 * r2 * float((Z[s] - Z[t]) @ (Z[s] - Z[t])))
            dp = math.exp(-0.5 * r2 * float((Z[s] + Z[t]) @ (Z[s] + Z[t])))
            outer[s, t] = 0.5 * (dm - dp) * f[s] * f[t] + 0.5 * (dm + dp) * fp[s] * fp[t]
    cross = np.array([-(sigma**2 / w) * delta[s] * float(Z[s] @ P @ Z[s]) * f[s]
                      for s in range(S)])
    return delta * f, delta * fp, outer, cross


def noise_objective(X, Z, c, gamma, mu, Sigma, levels, lam):
    """Returns ``theta ->`` grid average of the expected noisy Fisher objective plus the ridge.

    Only terms that depend on ``theta`` are kept.
    """
    S, d = Z.shape
    sq = np.array([float(z @ z) for z in Z])
    ZZ = Z @ Z.T
    Q = np.zeros((S, S))
    lin = np.zeros(S)
    for sigma in levels:
        w = math.sqrt(gamma**2 + sigma**2)
        P = np.linalg.inv(Sigma + sigma**2 * np.eye(d))
        for x in X:
            Ef, Efp, Eout, Ecross = noise_expectations_loop(Z, c, gamma, mu, Sigma, x, sigma)
            Q += 0.5 * (ZZ * Eout) / w**2
            lin += -(Efp * (Z @ P @ (x - mu)) + Ecross) / w - sq * Ef / w**2
    H = len(levels)

    def objective(theta):
        return (float(theta @ Q @ theta) + float(lin @ theta)) / H + 0.5 * lam * float(theta @ theta)

    return objective


def _central_grad(f, x, h):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _central_hess(f, x, h):
    n = x.size
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h
            ej[j] = h
            v = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h * h)
            H[i, j] = H[j, i] = v
    return H


def minimize_numerically(f, n, h=1.0):
    """Minimize with scipy's trust-region Newton method on finite-difference derivatives.

    Central differences are exact for quadratics at any step, so a unit
    step keeps rounding error at the level of ``eps * |f|``.
    """
    res = optimize.minimize(f, np.zeros(n), method="trust-exact",
                            jac=lambda x: _central_grad(f, x, h),
                            hess=lambda x: _central_hess(f, x, h),
                            options={"gtol": 1e-10, "maxiter": 200})
    return res.x


def rel_err(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))
