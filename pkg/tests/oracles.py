"""Independent reference computations used by the tests.

Nothing here imports the package's numerical kernels; each oracle is a
direct, slow transcription of the quantity it checks.
"""

from __future__ import annotations

import math

import numpy as np


def poisson_cdf_naive(k: int, lam: float) -> float:
    """P(Po(lam) <= k) by summing the pmf term by term."""
    if lam == 0:
        return 1.0
    term = math.exp(-lam)
    total = term
    for j in range(1, k + 1):
        term *= lam / j
        total += term
    return total


def poisson_quantile_naive(lam: float, p: float) -> int:
    k = 0
    while poisson_cdf_naive(k, lam) < p:
        k += 1
    return k


def systematic_resample_naive(w, base_uniform):
    N = len(w)
    out = []
    for i in range(N):
        point = (i + base_uniform) / N
        cum = 0.0
        for k in range(N):
            cum += w[k]
            if cum >= point:
                out.append(k)
                break
        else:
            out.append(N - 1)
    return out


def euclidean_sort_naive(states):
    X = [list(np.atleast_1d(row)) for row in states]
    N = len(X)
    start = min(range(N), key=lambda i: (X[i][0], i))
    order, left = [start], set(range(N)) - {start}
    while left:
        cur = X[order[-1]]
        nxt = min(left, key=lambda i: (sum((a - b) ** 2 for a, b in zip(X[i], cur)), i))
        order.append(nxt)
        left.remove(nxt)
    return order


def immigration_kalman_loglik(y, c1: float, sigma: float, x1_mean: float, x1_var: float) -> float:
    """Exact log-likelihood of y_t = x_t + N(0, sigma^2) for x_t = x_{t-1} + c1 + N(0, c1).

    The Euler scheme with a constant hazard sums exactly to this unit-interval
    transition for any number of sub-steps.
    """
    mean, var = x1_mean, x1_var
    ll = 0.0
    for t, yt in enumerate(np.asarray(y, dtype=float).ravel()):
        if t > 0:
            mean, var = mean + c1, var + c1
        s = var + sigma ** 2
        ll += -0.5 * (math.log(2 * math.pi * s) + (yt - mean) ** 2 / s)
        gain = var / s
        mean, var = mean + gain * (yt - mean), (1 - gain) * var
    return ll


def immigration_grid_posterior_mean(y, c1: float, sigma: float, x1: float, m: int, index: int) -> tuple:
    """Posterior mean and variance of the latent state at grid point ``index``.

    Latent grid: x_0 = x1 (known), increments N(c1/m, c1/m); y_t observes grid
    point t*m with N(0, sigma^2) noise. Solved by dense Gaussian conditioning.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = len(y)
    G = (n - 1) * m + 1
    dt = 1.0 / m
    mean = x1 + c1 * dt * np.arange(G)
    steps = np.arange(G)
    cov = c1 * dt * np.minimum.outer(steps, steps).astype(float)
    obs_idx = np.arange(n) * m
    S = cov[np.ix_(obs_idx, obs_idx)] + sigma ** 2 * np.eye(n)
    k = cov[index, obs_idx]
    w = np.linalg.solve(S, k)
    return float(mean[index] + w @ (y - mean[obs_idx])), float(cov[index, index] - k @ w)


def conditioned_hazard_symbolic(x, c, y, Delta, S, P, Sigma):
    """Evaluate h* with exact rational arithmetic in sympy."""
    import sympy as sp

    def R(v):
        return sp.Rational(float(v))

    X = sp.Matrix([R(v) for v in np.atleast_1d(x)])
    Cv = [R(v) for v in c]
    Sm = sp.Matrix(S)
    Pm = sp.Matrix(P)
    Y = sp.Matrix([R(v) for v in np.atleast_1d(y)])
    # immigration-death hazards: (c1, c2 x)
    h = sp.Matrix([Cv[0], Cv[1] * X[0]])
    alpha = Sm * h
    beta = Sm * sp.diag(*h) * Sm.T
    A = Pm.T * beta * Pm * R(Delta) + sp.Matrix(np.atleast_2d(Sigma).tolist()).applyfunc(R)
    hs = h + sp.diag(*h) * Sm.T * Pm * A.inv() * (Y - Pm.T * (X + alpha * R(Delta)))
    return [float(v) for v in hs]


def immigration_log_c1_posterior(y, sigma, x1_mean, x1_var, prior_sd=10.0, grid=None):
    """Posterior mean and sd of log c1 by quadrature over the exact likelihood."""
    grid = np.linspace(-3.0, 4.0, 4001) if grid is None else grid
    logpost = np.array([immigration_kalman_loglik(y, math.exp(g), sigma, x1_mean, x1_var) for g in grid])
    logpost += -0.5 * (grid / prior_sd) ** 2
    w = np.exp(logpost - logpost.max())
    w /= w.sum()
    mean = float(w @ grid)
    return mean, float(math.sqrt(w @ (grid - mean) ** 2))
