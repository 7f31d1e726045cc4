"""Reference implementations that share no code with the package.

Log-likelihoods are built from ``scipy.stats`` pmfs and maximised by a plain
coarse-to-fine grid search, so agreement with the package's Newton fits is an
independent check of both the likelihood and the optimiser. Every loglik
takes a ``(m, d)`` array of parameter points and returns ``m`` values.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy import stats


def _mu(X, P, k):
    return np.exp(X @ P[:, :k].T)  # (n, m)


def poisson_loglik(y, X):
    k = X.shape[1]
    return lambda P: stats.poisson.logpmf(y[:, None], _mu(X, P, k)).sum(axis=0)


def nb2_loglik(y, X):
    k = X.shape[1]

    def f(P):
        mu, theta = _mu(X, P, k), np.exp(P[:, k])
        return stats.nbinom.logpmf(y[:, None], theta, theta / (theta + mu)).sum(axis=0)

    return f


def nb1_loglik(y, X):
    k = X.shape[1]

    def f(P):
        mu, phi = _mu(X, P, k), np.exp(P[:, k])
        return stats.nbinom.logpmf(y[:, None], mu / phi, 1.0 / (1.0 + phi)).sum(axis=0)

    return f


def _mixture(y, nu, count_pmf):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log((1 - nu) * count_pmf + nu * (y[:, None] == 0)).sum(axis=0)


def zip_loglik(y, X):
    """Parameters ``(beta..., nu)``."""
    k = X.shape[1]

    def f(P):
        nu = P[:, k]
        out = _mixture(y, nu, stats.poisson.pmf(y[:, None], _mu(X, P, k)))
        return np.where((nu >= 0) & (nu < 1), out, -np.inf)

    return f


def zinb_loglik(y, X):
    """Parameters ``(beta..., log theta, nu)``."""
    k = X.shape[1]

    def f(P):
        mu, theta, nu = _mu(X, P, k), np.exp(P[:, k]), P[:, k + 1]
        pmf = stats.nbinom.pmf(y[:, None], theta, theta / (theta + mu))
        out = _mixture(y, nu, pmf)
        return np.where((nu >= 0) & (nu < 1), out, -np.inf)

    return f


def grid_maximize(f, centre, half_width, points=9, rounds=60, shrink=0.5, resolution=1e-7):
    """Coarse-to-fine grid search.

    Each round evaluates the full ``points``-per-axis grid around the current
    best point, moves to the best grid point and halves the grid. Returns
    ``(argmax, final_step)`` where ``final_step`` is the last grid spacing.
    """
    centre = np.asarray(centre, dtype=float)
    half = np.asarray(half_width, dtype=float)
    offsets = np.array(list(itertools.product(np.linspace(-1, 1, points), repeat=len(centre))))
    step = np.inf
    for _ in range(rounds):
        grid = centre + offsets * half
        vals = f(grid)
        centre = grid[int(np.nanargmax(np.where(np.isfinite(vals), vals, -np.inf)))]
        step = float(np.max(2 * half / (points - 1)))
        if step < resolution:
            break
        half = half * shrink
    return centre, step


def halfnormal_reference(n):
    """Inverse-normal quantiles from ``scipy.stats.norm.ppf`` (not ``ndtri``)."""
    i = np.arange(1, n + 1)
    return stats.norm.ppf((i + n - 0.125) / (2 * n + 0.5))


def nb2_pmf_bruteforce(y, mu, theta, y_max=10**6):
    """NB2 pmf at ``y`` from recursively built masses normalised over ``0..y_max``."""
    k = np.arange(y_max, dtype=float)
    # p(k+1)/p(k) = (k + theta)/(k + 1) * mu/(theta + mu)
    ratio = (k + theta) / (k + 1) * (mu / (theta + mu))
    logp = np.concatenate([[0.0], np.cumsum(np.log(ratio))])
    p = np.exp(logp - logp.max())
    return p[y] / p.sum()


def type7_quantile(column, q):
    """Hyndman-Fan type 7 quantile of one sample, written out by hand."""
    x = np.sort(np.asarray(column, dtype=float))
    h = (len(x) - 1) * q
    lo = int(np.floor(h))
    hi = min(lo + 1, len(x) - 1)
    return x[lo] + (h - lo) * (x[hi] - x[lo])
