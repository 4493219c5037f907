"""Brute-force reference implementations used only by the test suite.

Everything here trades speed for obviousness: dense grids, literal nested
loops, derivative-free optimization.  None of it shares numerical kernels
with the production modules -- basis evaluators are taken as opaque
callables where one is needed.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize


def ols_reference(X, y):
    """Normal-equations least squares with a pseudo-inverse fallback.

    Returns ``(beta, minimum_norm_flag)``; the flag marks rank-deficient
    designs where the minimum-norm solution was taken.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    G = X.T @ X
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        return np.linalg.pinv(X) @ y, True
    return np.linalg.solve(G, X.T @ y), False


def penalty_quadrature_reference(second_deriv, breaks, k, n_points=100_000):
    """Trapezoid-rule integral of products of second derivatives.

    ``second_deriv(x)`` must return an ``len(x) x k`` matrix of basis second
    derivatives; the integral runs over ``[breaks[0], breaks[-1]]``.
    """
    lo, hi = float(breaks[0]), float(breaks[-1])
    grid = np.linspace(lo, hi, n_points)
    D = np.asarray(second_deriv(grid))
    w = np.full(n_points, (hi - lo) / (n_points - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return (D * w[:, None]).T @ D


def explicit_loop_design(kind, data, evaluators):
    """Summed-term design matrices written as literal nested loops.

    ``kind``:
      * ``'vcm'``  -- data ``(z, x)`` scalars, evaluators ``(basis,)``;
        row i = basis(z_i) * x_i.
      * ``'sofr'`` -- data ``(V, X)`` n x T matrices, evaluators ``(basis,)``;
        row i = sum_t X[i,t] * basis(V[i,t]).
      * ``'dlm'``  -- data ``(X, L)`` n x T matrices, evaluators
        ``(basis_x, basis_lag)``; row i = sum_t kron(basis_x(X[i,t]),
        basis_lag(L[i,t])) with the first margin's index slowest.

    Each ``basis`` callable maps a scalar to a 1-D coefficient row.
    """
    if kind == "vcm":
        z, x = data
        (basis,) = evaluators
        k = len(basis(float(z[0])))
        out = np.zeros((len(z), k))
        for i in range(len(z)):
            row = basis(float(z[i]))
            for a in range(k):
                out[i, a] = row[a] * float(x[i])
        return out

    if kind == "sofr":
        V, X = data
        (basis,) = evaluators
        n, T = V.shape
        k = len(basis(float(V[0, 0])))
        out = np.zeros((n, k))
        for i in range(n):
            for t in range(T):
                row = basis(float(V[i, t]))
                for a in range(k):
                    out[i, a] += float(X[i, t]) * row[a]
        return out

    if kind == "dlm":
        X, L = data
        basis_x, basis_lag = evaluators
        n, T = X.shape
        kx = len(basis_x(float(X[0, 0])))
        kl = len(basis_lag(float(L[0, 0])))
        out = np.zeros((n, kx * kl))
        for i in range(n):
            for t in range(T):
                bx = basis_x(float(X[i, t]))
                bl = basis_lag(float(L[i, t]))
                for a in range(kx):
                    for b in range(kl):
                        out[i, a * kl + b] += bx[a] * bl[b]
        return out

    raise ValueError(f"unknown design kind {kind!r}")


def block_diag_penalty(blocks, offsets, p):
    """Dense zero-padded block-diagonal matrix, assembled entry by entry."""
    out = np.zeros((p, p))
    for S, start in zip(blocks, offsets):
        S = np.asarray(S, dtype=float)
        for i in range(S.shape[0]):
            for j in range(S.shape[1]):
                out[start + i, start + j] += S[i, j]
    return out


def generic_glm_maximizer(X, y, family, maxiter=20_000):
    """Derivative-free simplex maximization of the unpenalized log-likelihood
    from a zero start.  Only suitable for tiny coefficient counts."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)

    def negloglik(beta):
        eta = X @ beta
        if family.name == "gaussian":
            return float(np.sum((y - eta) ** 2))
        mu = np.exp(np.clip(eta, -300, 300))
        if family.name == "poisson":
            return float(np.sum(mu - y * np.log(mu)))
        k = family.kappa
        return float(np.sum(
            (y + 1.0 / k) * np.log1p(k * mu) - y * np.log(k * mu)
        ))

    res = minimize(
        negloglik, np.zeros(X.shape[1]), method="Nelder-Mead",
        options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": maxiter,
                 "maxfev": maxiter},
    )
    return res.x
