"""Maximum-likelihood and quasi-likelihood fits of the six count models.

Every family is fitted by the same engine: a bounded Newton ascent on the
parameter vector ``(beta, log-dispersion, zero-model coefficients)`` with
analytic gradients and Hessians, Levenberg damping where the Hessian is not
negative definite, and step halving so the log-likelihood never decreases.
For the Poisson log link this is exactly IRLS. Zero-inflated models are
warmed up with EM iterations over the latent structural-zero indicator
before the joint Newton polish.

The engine works on a *batch* of response vectors sharing one model matrix,
which is what makes simulated envelopes (99 refits per plot) affordable.
Each row of a batch follows its own trajectory, so a row's result does not
depend on which other rows share the batch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.special import digamma, expit, gammaln, log_expit, logit, polygamma

from .distributions import FamilyTag

THETA_CAP = 1e6
PHI_FLOOR = 1e-6
NU_FLOOR = 1e-8
_LOG_DISP_BOUNDS = {
    FamilyTag.NBQUAD: (np.log(1e-8), np.log(THETA_CAP)),
    FamilyTag.ZINB: (np.log(1e-8), np.log(THETA_CAP)),
    FamilyTag.NBLIN: (np.log(PHI_FLOOR), np.log(1e8)),
}
_LOGIT_NU_BOUNDS = (float(logit(NU_FLOOR)), float(logit(1.0 - NU_FLOOR)))
_ZERO_COEF_BOUND = 50.0
_MAX_STEP = 5.0

FLAG_EFFECTIVELY_POISSON = "effectively Poisson"
FLAG_NO_ZERO_INFLATION = "no zero-inflation detected"
FLAG_NOT_CONVERGED = "not converged"


class FitError(RuntimeError):
    """A model could not be fitted to the data."""


class SingularDesignError(FitError):
    pass


class DegenerateResponseError(FitError):
    pass


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class Dataset:
    """Responses ``y`` and model matrix ``X`` (intercept column included)."""

    y: np.ndarray
    X: np.ndarray
    column_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        y = np.asarray(self.y)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if y.ndim != 1 or X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError("y must be a vector with one row of X per element")
        if not np.all(np.isfinite(y)) or np.any(y < 0) or np.any(np.floor(y) != y):
            raise ValueError("y must contain finite nonnegative integers")
        n, k = X.shape
        if not n >= k >= 1:
            raise ValueError(f"need n >= k >= 1, got n={n}, k={k}")
        if not np.all(np.isfinite(X)):
            raise ValueError("X must be finite")
        self.y = y.astype(np.int64)
        self.X = X
        if not self.column_names:
            self.column_names = ["(Intercept)"] + [f"x{j}" for j in range(1, k)]
        if len(self.column_names) != k:
            raise ValueError("column_names must label every column of X")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_covariates(cls, y, *covariates, names: Sequence[str] | None = None) -> "Dataset":
        y = np.asarray(y)
        cols = [np.ones(len(y))] + [np.asarray(c, dtype=float) for c in covariates]
        labels = ["(Intercept)"] + list(names or [f"x{j}" for j in range(1, len(cols))])
        return cls(y, np.column_stack(cols), labels)


@dataclass(frozen=True)
class FitConfig:
    link: str = "log"
    max_iterations: int = 100
    coefficient_tolerance: float = 1e-8
    #: "intercept" (a single nu) or "covariates" (logit-linear in the columns of X).
    zero_model: str = "covariates"
    em_iterations: int = 25

    def __post_init__(self):
        if self.link != "log":
            raise ValueError("only the log link is supported")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.coefficient_tolerance > 0:
            raise ValueError("coefficient_tolerance must be > 0")
        if self.zero_model not in ("intercept", "covariates"):
            raise ValueError("zero_model must be 'intercept' or 'covariates'")
        if self.em_iterations < 0:
            raise ValueError("em_iterations must be >= 0")


@dataclass
class FittedModel:
    """A fitted count model.

    ``phi_hat`` is the quasi-Poisson or NB-lin dispersion, or the NB2 size
    (theta) for NB-quad and ZINB. ``nu_hat`` is the zero-inflation
    probability at the zero-model intercept, ``expit(zero_coef[0])``; with a
    covariate-dependent zero model the per-observation probabilities are in
    ``nu_fitted``.
    """

    family: FamilyTag
    beta: np.ndarray
    phi_hat: float | None
    nu_hat: float | None
    mu_hat: np.ndarray
    loglik: float | None
    n_params: int
    converged: bool
    iterations: int
    flags: tuple[str, ...] = ()
    zero_model: str | None = None
    zero_coef: np.ndarray | None = None
    nu_fitted: np.ndarray | None = None
    config: FitConfig = field(default_factory=FitConfig)

    @property
    def n(self) -> int:
        return self.mu_hat.shape[0]

    @property
    def label(self) -> str:
        return self.family.label


# --------------------------------------------------------------------------- #
# Per-observation log-likelihood terms
# --------------------------------------------------------------------------- #


def _count_terms(family: FamilyTag, y, eta, s, derivs: bool = True):
    """Count log-pmf and its derivatives in ``eta`` (log mean) and ``s`` (log dispersion).

    Returns ``(l, l_e, l_s, l_ee, l_es, l_ss)``; dispersion entries are None
    for the Poisson count model.
    """
    mu = np.exp(eta)
    if family in (FamilyTag.POISSON, FamilyTag.QUASIPOISSON, FamilyTag.ZIP):
        l = y * eta - mu - gammaln(y + 1.0)
        if not derivs:
            return (l,)
        return l, y - mu, None, -mu, None, None
    if family in (FamilyTag.NBQUAD, FamilyTag.ZINB):
        theta = np.exp(s)
        tm = theta + mu
        log_tm = np.log(tm)
        l = (
            gammaln(y + theta)
            - gammaln(theta)
            - gammaln(y + 1.0)
            + theta * (s - log_tm)
            + y * (eta - log_tm)
        )
        if not derivs:
            return (l,)
        l_e = theta * (y - mu) / tm
        l_ee = -theta * mu * (theta + y) / tm**2
        l_t = digamma(y + theta) - digamma(theta) + s + 1.0 - log_tm - (theta + y) / tm
        l_tt = (
            polygamma(1, y + theta)
            - polygamma(1, theta)
            + 1.0 / theta
            - 1.0 / tm
            - (mu - y) / tm**2
        )
        l_s = theta * l_t
        l_ss = l_s + theta**2 * l_tt
        l_es = theta * (y - mu) * mu / tm**2
        return l, l_e, l_s, l_ee, l_es, l_ss
    # NB1: size mu/phi, success probability 1/(1+phi)
    phi = np.exp(s)
    r = mu / phi
    c = np.log1p(phi)
    l = gammaln(y + r) - gammaln(r) - gammaln(y + 1.0) - r * c + y * (s - c)
    if not derivs:
        return (l,)
    a1 = digamma(y + r) - digamma(r) - c
    a2 = polygamma(1, y + r) - polygamma(1, r)
    q = phi / (1.0 + phi)
    ra1 = r * a1
    r2a2 = r * r * a2
    l_e = ra1
    l_s = -ra1 - (r + y) * q + y
    l_ee = ra1 + r2a2
    l_es = -ra1 - r2a2 - r * q
    l_ss = ra1 + r2a2 + 2.0 * r * q - (r + y) * q * (1.0 - q)
    return l, l_e, l_s, l_ee, l_es, l_ss


def _has_dispersion(family: FamilyTag) -> bool:
    return family in (FamilyTag.NBLIN, FamilyTag.NBQUAD, FamilyTag.ZINB)


def _count_family(family: FamilyTag) -> FamilyTag:
    return {FamilyTag.ZIP: FamilyTag.POISSON, FamilyTag.ZINB: FamilyTag.NBQUAD}.get(family, family)


def _rowmul(A, M):
    """Row-wise ``A @ M`` that gives each row the same result whatever the batch size.

    A plain 2-D product lets BLAS pick kernels by row count, which changes
    the last bits of a row depending on which rows share its batch.
    """
    return np.matmul(A[:, None, :], M)[:, 0, :]


class _Objective:
    """Log-likelihood of a batch as a function of the stacked parameter matrix."""

    def __init__(self, family: FamilyTag, X, Y, Z=None, weights=None):
        self.family = family
        self.X = X
        self.Y = Y.astype(float)
        self.Z = Z
        self.k = X.shape[1]
        self.has_disp = _has_dispersion(family)
        self.kz = 0 if Z is None else Z.shape[1]
        self.p = self.k + int(self.has_disp) + self.kz
        self.weights = weights
        self.is_zero = self.Y == 0

    def split(self, theta):
        k = self.k
        beta = theta[:, :k]
        s = theta[:, k : k + 1] if self.has_disp else None
        gamma = theta[:, k + int(self.has_disp) :] if self.kz else None
        return beta, s, gamma

    def __call__(self, theta, derivs=True):
        X, Y = self.X, self.Y
        beta, s, gamma = self.split(theta)
        eta = _rowmul(beta, X.T)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            terms = _count_terms(self.family, Y, eta, s, derivs)
            if self.kz:
                return self._mixture(terms, gamma, derivs)
            l = terms[0]
            if self.weights is not None:
                l = l * self.weights
            ll = l.sum(axis=1)
            if not derivs:
                return ll
            _, l_e, l_s, l_ee, l_es, l_ss = terms
            w = self.weights
            if w is not None:
                l_e, l_ee = l_e * w, l_ee * w
                if self.has_disp:
                    l_s, l_es, l_ss = l_s * w, l_es * w, l_ss * w
            return ll, *self._assemble(l_e, l_s, None, l_ee, l_es, l_ss, None, None, None)

    def _mixture(self, terms, gamma, derivs):
        zeta = _rowmul(gamma, self.Z.T)
        log_pi = log_expit(zeta)
        log_keep = log_expit(-zeta)
        lc = terms[0]
        count_branch = log_keep + lc
        l = np.where(self.is_zero, np.logaddexp(log_pi, count_branch), count_branch)
        ll = l.sum(axis=1)
        if not derivs:
            return ll
        _, c_e, c_s, c_ee, c_es, c_ss = terms
        pi = expit(zeta)
        tau = np.where(self.is_zero, np.exp(log_pi - l), 0.0)
        kappa = 1.0 - tau
        tk = tau * kappa
        g_e = kappa * c_e
        h_ee = kappa * c_ee + tk * c_e**2
        h_ez = -tk * c_e
        h_zz = tk - pi * (1.0 - pi)
        g_z = tau - pi
        if self.has_disp:
            g_s = kappa * c_s
            h_es = kappa * c_es + tk * c_e * c_s
            h_ss = kappa * c_ss + tk * c_s**2
            h_sz = -tk * c_s
        else:
            g_s = h_es = h_ss = h_sz = None
        return ll, *self._assemble(g_e, g_s, g_z, h_ee, h_es, h_ss, h_ez, h_sz, h_zz)

    def _assemble(self, g_e, g_s, g_z, h_ee, h_es, h_ss, h_ez, h_sz, h_zz):
        X, Z, k = self.X, self.Z, self.k
        B = g_e.shape[0]
        grad = np.empty((B, self.p))
        hess = np.empty((B, self.p, self.p))
        grad[:, :k] = _rowmul(g_e, X)
        hess[:, :k, :k] = np.matmul((h_ee[:, :, None] * X).transpose(0, 2, 1), X)
        j = k
        if self.has_disp:
            grad[:, j] = g_s.sum(axis=1)
            hes = _rowmul(h_es, X)
            hess[:, :k, j] = hes
            hess[:, j, :k] = hes
            hess[:, j, j] = h_ss.sum(axis=1)
            j += 1
        if self.kz:
            grad[:, j:] = _rowmul(g_z, Z)
            hez = np.matmul((h_ez[:, :, None] * X).transpose(0, 2, 1), Z)
            hess[:, :k, j:] = hez
            hess[:, j:, :k] = hez.transpose(0, 2, 1)
            if self.has_disp:
                hsz = _rowmul(h_sz, Z)
                hess[:, k, j:] = hsz
                hess[:, j:, k] = hsz
            hess[:, j:, j:] = np.matmul((h_zz[:, :, None] * Z).transpose(0, 2, 1), Z)
        return grad, hess


@dataclass
class _AscentResult:
    theta: np.ndarray
    loglik: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray


def _ascend(objective, theta0, lower, upper, fixed, tol, max_iter, rows=None) -> _AscentResult:
    """Bounded, damped Newton ascent applied row by row over a batch."""
    theta = np.clip(theta0.astype(float), lower, upper)
    B, P = theta.shape
    ll, grad, hess = objective(theta)
    active = np.isfinite(ll) if rows is None else rows & np.isfinite(ll)
    converged = np.zeros(B, dtype=bool)
    iterations = np.zeros(B, dtype=int)
    eye = np.eye(P)
    for _ in range(max_iter):
        if not active.any():
            break
        free = ~fixed & ~((theta <= lower) & (grad < 0)) & ~((theta >= upper) & (grad > 0))
        g = np.where(free, grad, 0.0)
        g = np.nan_to_num(g, nan=0.0, posinf=0.0, neginf=0.0)
        mask2 = free[:, :, None] & free[:, None, :]
        neg_h = np.where(mask2, -np.nan_to_num(hess, nan=0.0, posinf=0.0, neginf=0.0), 0.0)
        neg_h = neg_h + np.where(free, 0.0, 1.0)[:, :, None] * eye
        eig_min = np.linalg.eigvalsh(neg_h)[:, 0]
        scale = np.maximum(np.abs(np.diagonal(neg_h, axis1=1, axis2=2)).max(axis=1), 1.0)
        shift = np.where(eig_min < 1e-10 * scale, 1e-8 * scale - eig_min, 0.0)
        step = np.linalg.solve(neg_h + shift[:, None, None] * eye, g[:, :, None])[:, :, 0]
        step = np.where(free, step, 0.0)
        big = np.abs(step).max(axis=1)
        step *= np.minimum(1.0, _MAX_STEP / np.maximum(big, 1e-300))[:, None]

        t = np.ones(B)
        pending = active.copy()
        cand = theta.copy()
        ll_cand = ll.copy()
        slack = 1e-12 * (1.0 + np.abs(ll))
        for _ in range(50):
            trial = np.clip(theta + t[:, None] * step, lower, upper)
            ll_trial = objective(trial, derivs=False)
            ok = np.isfinite(ll_trial) & (ll_trial >= ll - slack)
            accept = pending & ok
            cand[accept] = trial[accept]
            ll_cand[accept] = ll_trial[accept]
            pending &= ~ok
            if not pending.any():
                break
            t = np.where(pending, t * 0.5, t)

        moved = active & ~pending
        delta = np.abs(cand - theta).max(axis=1)
        theta = np.where(moved[:, None], cand, theta)
        iterations += active
        stalled = active & pending
        converged |= stalled & (np.abs(step).max(axis=1) < np.sqrt(tol))
        converged |= moved & (delta < tol)
        active &= ~converged & ~stalled
        if active.any() or moved.any():
            ll_new, grad_new, hess_new = objective(theta)
            upd = moved
            ll = np.where(upd, ll_new, ll)
            grad = np.where(upd[:, None], grad_new, grad)
            hess = np.where(upd[:, None, None], hess_new, hess)
    return _AscentResult(theta, ll, converged, iterations)


# --------------------------------------------------------------------------- #
# Batch fitting
# --------------------------------------------------------------------------- #


@dataclass
class BatchFit:
    """Fits of one family to each row of a response matrix."""

    family: FamilyTag
    beta: np.ndarray
    disp: np.ndarray | None
    zero_coef: np.ndarray | None
    mu: np.ndarray
    nu: np.ndarray | None
    loglik: np.ndarray | None
    converged: np.ndarray
    iterations: np.ndarray
    failed: np.ndarray
    boundary: np.ndarray
    n_params: int
    zero_model: str | None

    def __len__(self):
        return self.beta.shape[0]


def check_design(X: np.ndarray) -> None:
    """Raise SingularDesignError unless X has full column rank."""
    r = scipy.linalg.qr(X, mode="r", pivoting=True)[0]
    pivots = np.abs(np.diag(r)) ** 2
    if pivots.size < X.shape[1] or np.any(pivots < 1e-10 * pivots[0]):
        raise SingularDesignError("model matrix is rank deficient")


def _zero_design(X, zero_model):
    if zero_model == "covariates":
        return X
    return np.ones((X.shape[0], 1))


def _poisson_start(X, Y):
    theta = np.zeros((Y.shape[0], X.shape[1]))
    theta[:, 0] = np.log(Y.mean(axis=1) + 0.5)
    return theta


def _fit_count(family, X, Y, cfg, rows):
    """Fit a non-inflated likelihood family; returns theta, ll, converged, iterations."""
    B = Y.shape[0]
    k = X.shape[1]
    tol, maxit = cfg.coefficient_tolerance, cfg.max_iterations
    pois = _Objective(FamilyTag.POISSON, X, Y)
    lo = np.full(k, -np.inf)
    hi = np.full(k, np.inf)
    res = _ascend(pois, _poisson_start(X, Y), lo, hi, np.zeros(k, bool), tol, maxit, rows)
    if family in (FamilyTag.POISSON, FamilyTag.QUASIPOISSON):
        return res
    beta = res.theta
    mu = np.exp(_rowmul(beta, X.T))
    n = X.shape[0]
    s_lo, s_hi = _LOG_DISP_BOUNDS[family]
    if family is FamilyTag.NBQUAD:
        num = (mu**2).sum(axis=1)
        den = ((Y - mu) ** 2 - mu).sum(axis=1)
        start = np.where(den > 0, num / np.where(den > 0, den, 1.0), THETA_CAP / 10)
        start = np.clip(start, 1e-3, THETA_CAP / 10)
    else:
        x2 = (((Y - mu) ** 2) / mu).sum(axis=1) / max(n - k, 1)
        start = np.clip(x2 - 1.0, 1e-3, 1e3)
    theta0 = np.column_stack([beta, np.log(start)])
    obj = _Objective(family, X, Y)
    lo = np.append(np.full(k, -np.inf), s_lo)
    hi = np.append(np.full(k, np.inf), s_hi)
    conv_rows = rows & np.all(np.isfinite(beta), axis=1)
    out = _ascend(obj, theta0, lo, hi, np.zeros(k + 1, bool), tol, maxit, conv_rows)
    out.iterations += res.iterations
    return out


def _zero_probability(count_family, Y_zero_shape, eta, s):
    l0 = _count_terms(count_family, np.zeros(Y_zero_shape), eta, s, derivs=False)[0]
    return np.exp(l0)


def _fit_zero_inflated(family, X, Y, cfg, rows):
    count_family = _count_family(family)
    base = _fit_count(count_family, X, Y, cfg, rows)
    k = X.shape[1]
    Z = _zero_design(X, cfg.zero_model)
    kz = Z.shape[1]
    has_disp = _has_dispersion(family)
    B, n = Y.shape
    beta = base.theta[:, :k]
    s = base.theta[:, k : k + 1] if has_disp else None
    eta = _rowmul(beta, X.T)
    with np.errstate(over="ignore", invalid="ignore"):
        p0 = _zero_probability(count_family, (B, n), eta, s)
    zero_frac = (Y == 0).mean(axis=1)
    nu0 = np.clip(np.maximum(0.01, zero_frac - p0.mean(axis=1)), 0.01, 0.99)
    gamma0 = np.zeros((B, kz))
    gamma0[:, 0] = logit(nu0)
    theta = np.concatenate([base.theta, gamma0], axis=1)

    obj = _Objective(family, X, Y, Z)
    P = obj.p
    lo = np.full(P, -np.inf)
    hi = np.full(P, np.inf)
    if has_disp:
        lo[k], hi[k] = _LOG_DISP_BOUNDS[family]
    if kz == 1:
        lo[-1], hi[-1] = _LOGIT_NU_BOUNDS
    else:
        lo[-kz:], hi[-kz:] = -_ZERO_COEF_BOUND, _ZERO_COEF_BOUND

    has_zero = (Y == 0).any(axis=1)
    work = rows & has_zero & np.isfinite(base.loglik)
    if kz == 1:
        # Score for nu at nu = 0 given the base fit; <= 0 means the boundary
        # is a stationary point of the joint problem.
        with np.errstate(divide="ignore", over="ignore"):
            score = np.where(Y == 0, 1.0 / p0, 0.0).sum(axis=1) - n
        work &= score > 0
    theta = _em(obj, theta, lo, hi, cfg.em_iterations, work)
    res = _ascend(obj, theta, lo, hi, np.zeros(P, bool), cfg.coefficient_tolerance,
                  cfg.max_iterations, work)

    gamma = res.theta[:, -kz:]
    with np.errstate(over="ignore"):
        nu = expit(_rowmul(gamma, Z.T))
    pinned = ~has_zero | (nu.max(axis=1) <= NU_FLOOR * (1 + 1e-6))
    pinned |= ~work
    theta_out = res.theta.copy()
    theta_out[pinned, : base.theta.shape[1]] = base.theta[pinned]
    # intercept -> -inf, remaining zero-model coefficients 0, so nu == 0 exactly
    theta_out[pinned, -kz:] = 0.0
    theta_out[pinned, -kz] = -np.inf
    ll = np.where(pinned, base.loglik, res.loglik)
    converged = np.where(pinned, base.converged, res.converged)
    iterations = base.iterations + np.where(pinned, 0, res.iterations)
    return _AscentResult(theta_out, ll, converged, iterations), pinned


def _em(obj: _Objective, theta, lo, hi, n_iter, rows):
    """Generalised EM warm start: one damped Newton M-step per iteration."""
    if n_iter == 0 or not rows.any():
        return theta
    k, kz = obj.k, obj.kz
    X, Z, Y = obj.X, obj.Z, obj.Y
    is_zero = obj.is_zero
    count = _Objective(obj.family, X, Y)
    cp = k + int(obj.has_disp)
    ll_start = obj(theta, derivs=False)
    best = theta.copy()
    cur = theta.copy()
    for _ in range(n_iter):
        beta, s, gamma = obj.split(cur)
        eta = _rowmul(beta, X.T)
        zeta = _rowmul(gamma, Z.T)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            lc0 = _count_terms(obj.family, np.zeros_like(Y), eta, s, derivs=False)[0]
            log_pi = log_expit(zeta)
            log_c = log_expit(-zeta) + lc0
            tau = np.where(is_zero, np.exp(log_pi - np.logaddexp(log_pi, log_c)), 0.0)
        # zero part
        if kz == 1:
            new_gamma = logit(np.clip(tau.mean(axis=1), NU_FLOOR, 1 - NU_FLOOR))[:, None]
        else:
            pi = expit(zeta)
            g = _rowmul(tau - pi, Z)
            h = np.matmul(((pi * (1 - pi))[:, :, None] * Z).transpose(0, 2, 1), Z)
            h += 1e-8 * np.eye(kz)
            new_gamma = gamma + np.linalg.solve(h, g[:, :, None])[:, :, 0]
        # count part: weighted Newton step
        count.weights = 1.0 - tau
        c_theta = cur[:, :cp]
        _, g, h = count(c_theta)
        neg_h = -np.nan_to_num(h)
        eig_min = np.linalg.eigvalsh(neg_h)[:, 0]
        scale = np.maximum(np.abs(np.diagonal(neg_h, axis1=1, axis2=2)).max(axis=1), 1.0)
        shift = np.where(eig_min < 1e-10 * scale, 1e-8 * scale - eig_min, 0.0)
        step = np.linalg.solve(neg_h + shift[:, None, None] * np.eye(cp),
                               np.nan_to_num(g)[:, :, None])[:, :, 0]
        big = np.abs(step).max(axis=1)
        step *= np.minimum(1.0, _MAX_STEP / np.maximum(big, 1e-300))[:, None]
        nxt = np.concatenate([c_theta + step, new_gamma], axis=1)
        nxt = np.clip(nxt, lo, hi)
        cur = np.where(rows[:, None] & np.all(np.isfinite(nxt), axis=1)[:, None], nxt, cur)
    ll_end = obj(cur, derivs=False)
    better = rows & np.isfinite(ll_end) & (ll_end >= ll_start)
    best[better] = cur[better]
    return best


def fit_batch(family, X: np.ndarray, Y: np.ndarray, cfg: FitConfig | None = None) -> BatchFit:
    """Fit ``family`` separately to every row of ``Y`` (shape ``(B, n)``)."""
    family = FamilyTag.parse(family)
    cfg = cfg or FitConfig()
    X = np.asarray(X, dtype=float)
    Y = np.atleast_2d(np.asarray(Y))
    B, n = Y.shape
    k = X.shape[1]
    degenerate = Y.sum(axis=1) == 0
    rows = ~degenerate
    nu = zero_coef = disp = None
    pinned = np.zeros(B, dtype=bool)
    zero_model = None
    n_params = k

    if family.zero_inflated:
        res, pinned = _fit_zero_inflated(family, X, Y, cfg, rows)
        zero_model = cfg.zero_model
        Z = _zero_design(X, cfg.zero_model)
        kz = Z.shape[1]
        zero_coef = res.theta[:, -kz:]
        # a separating zero model can push expit to exactly 1
        with np.errstate(over="ignore"):
            nu = np.minimum(expit(_rowmul(zero_coef, Z.T)), 1.0 - NU_FLOOR)
        n_params += kz
    else:
        res = _fit_count(family, X, Y, cfg, rows)

    beta = res.theta[:, :k]
    with np.errstate(over="ignore", invalid="ignore"):
        mu = np.exp(_rowmul(beta, X.T))
    loglik = res.loglik
    boundary = pinned.copy()
    if _has_dispersion(family):
        s = res.theta[:, k]
        disp = np.exp(s)
        lo, hi = _LOG_DISP_BOUNDS[family]
        if family is FamilyTag.NBLIN:
            boundary |= s <= lo + 1e-12
        elif family is FamilyTag.NBQUAD:
            boundary |= s >= hi - 1e-12
        n_params += 1
    elif family is FamilyTag.QUASIPOISSON:
        if n <= k:
            raise FitError("quasi-Poisson dispersion undefined for n <= k")
        with np.errstate(invalid="ignore", divide="ignore"):
            disp = (((Y - mu) ** 2) / mu).sum(axis=1) / (n - k)
        loglik = None
        n_params += 1

    finite = np.all(np.isfinite(beta), axis=1) & np.all(np.isfinite(mu) & (mu > 0), axis=1)
    if loglik is not None:
        finite &= np.isfinite(loglik)
    if disp is not None:
        finite &= np.isfinite(disp) & (disp > 0)
    if nu is not None:
        finite &= np.all(np.isfinite(nu) & (nu < 1.0), axis=1)
    failed = degenerate | ~finite
    return BatchFit(
        family=family,
        beta=beta,
        disp=disp,
        zero_coef=zero_coef,
        mu=mu,
        nu=nu,
        loglik=loglik,
        converged=res.converged & ~failed,
        iterations=res.iterations,
        failed=failed,
        boundary=boundary,
        n_params=n_params,
        zero_model=zero_model,
    )


def _row_model(batch: BatchFit, i: int, cfg: FitConfig) -> FittedModel:
    family = batch.family
    flags = []
    if batch.boundary[i]:
        flags.append(FLAG_NO_ZERO_INFLATION if family.zero_inflated else FLAG_EFFECTIVELY_POISSON)
    if family is FamilyTag.ZINB and batch.disp[i] >= THETA_CAP * (1 - 1e-9):
        flags.append(FLAG_EFFECTIVELY_POISSON)
    if not batch.converged[i]:
        flags.append(FLAG_NOT_CONVERGED)
    nu_hat = None
    nu_fitted = None
    zero_coef = None
    if family.zero_inflated:
        nu_fitted = batch.nu[i].copy()
        nu_hat = float(expit(batch.zero_coef[i, 0]))
        zero_coef = batch.zero_coef[i].copy()
    return FittedModel(
        family=family,
        beta=batch.beta[i].copy(),
        phi_hat=None if batch.disp is None else float(batch.disp[i]),
        nu_hat=nu_hat,
        mu_hat=batch.mu[i].copy(),
        loglik=None if batch.loglik is None else float(batch.loglik[i]),
        n_params=batch.n_params,
        converged=bool(batch.converged[i]),
        iterations=int(batch.iterations[i]),
        flags=tuple(flags),
        zero_model=batch.zero_model,
        zero_coef=zero_coef,
        nu_fitted=nu_fitted,
        config=cfg,
    )


def fit_model(family, data: Dataset, cfg: FitConfig | None = None) -> FittedModel:
    """Fit one of the six families to ``data``."""
    family = FamilyTag.parse(family)
    cfg = cfg or FitConfig()
    check_design(data.X)
    if data.y.sum() == 0:
        raise DegenerateResponseError("degenerate response: all counts are zero")
    if family is FamilyTag.QUASIPOISSON and data.n <= data.k:
        raise FitError("quasi-Poisson dispersion undefined for n <= k")
    batch = fit_batch(family, data.X, data.y[None, :], cfg)
    if batch.failed[0]:
        raise FitError(f"{family.label} fit produced non-finite estimates")
    model = _row_model(batch, 0, cfg)
    if not model.converged:
        warnings.warn(
            f"{family.label} fit did not converge in {cfg.max_iterations} iterations",
            ConvergenceWarning,
            stacklevel=2,
        )
    return model


def fit_poisson(data: Dataset, cfg: FitConfig | None = None) -> FittedModel:
    return fit_model(FamilyTag.POISSON, data, cfg)


def fit_quasi_poisson(data: Dataset, cfg: FitConfig | None = None) -> FittedModel:
    return fit_model(FamilyTag.QUASIPOISSON, data, cfg)


def fit_nb_lin(data: Dataset, cfg: FitConfig | None = None) -> FittedModel:
    return fit_model(FamilyTag.NBLIN, data, cfg)


def fit_nb_quad(data: Dataset, cfg: FitConfig | None = None) -> FittedModel:
    return fit_model(FamilyTag.NBQUAD, data, cfg)


def fit_zip(data: Dataset, cfg: FitConfig | None = None) -> FittedModel:
    return fit_model(FamilyTag.ZIP, data, cfg)


def fit_zinb(data: Dataset, cfg: FitConfig | None = None) -> FittedModel:
    return fit_model(FamilyTag.ZINB, data, cfg)


def loglik_at(family, y, X, beta, disp=None, zero_coef=None, zero_model="covariates") -> float:
    """Log-likelihood at given parameters (used by independent checks)."""
    family = FamilyTag.parse(family)
    X = np.asarray(X, dtype=float)
    parts = [np.atleast_1d(beta)]
    if _has_dispersion(family):
        parts.append([np.log(disp)])
    Z = None
    if family.zero_inflated:
        Z = _zero_design(X, zero_model)
        parts.append(np.atleast_1d(zero_coef))
    theta = np.concatenate([np.asarray(p, dtype=float) for p in parts])[None, :]
    obj = _Objective(family, X, np.asarray(y)[None, :], Z)
    return float(obj(theta, derivs=False)[0])


# --------------------------------------------------------------------------- #
# Residuals, information criteria, simulation
# --------------------------------------------------------------------------- #


def pearson_batch(family: FamilyTag, Y, mu, disp=None, nu=None):
    """Pearson residuals for arrays of responses and fitted parameters."""
    Y = np.asarray(Y, dtype=float)
    if np.any(~(mu > 0)):
        raise FitError("degenerate fit: fitted mean is zero")
    d = None if disp is None else np.asarray(disp, dtype=float)
    if d is not None and d.ndim == 1 and np.ndim(mu) == 2:
        d = d[:, None]
    if family is FamilyTag.POISSON:
        mean, var = mu, mu
    elif family is FamilyTag.QUASIPOISSON:
        mean, var = mu, d * mu
    elif family is FamilyTag.NBLIN:
        mean, var = mu, mu * (1.0 + d)
    elif family is FamilyTag.NBQUAD:
        mean, var = mu, mu + mu**2 / d
    elif family is FamilyTag.ZIP:
        mean, var = (1 - nu) * mu, (1 - nu) * mu * (1 + nu * mu)
    else:
        mean, var = (1 - nu) * mu, (1 - nu) * mu * (1 + mu / d + nu * mu)
    return (Y - mean) / np.sqrt(var)


def pearson_residuals(fit: FittedModel, data: Dataset) -> np.ndarray:
    """Pearson residuals ``(y - E[y]) / sqrt(Var[y])`` at the fitted parameters."""
    if fit.n != data.n:
        raise ValueError("fit and data have different lengths")
    return pearson_batch(fit.family, data.y, fit.mu_hat, fit.phi_hat, fit.nu_fitted)


def bic(fit: FittedModel, n: int | None = None) -> float:
    """Bayesian information criterion, counting dispersion and zero-model parameters."""
    if fit.loglik is None:
        raise ValueError("BIC unavailable for quasi-likelihood fit")
    n = fit.n if n is None else n
    return -2.0 * fit.loglik + fit.n_params * np.log(n)


def simulate_batch(fit: FittedModel, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """One simulated response vector per generator, shape ``(len(rngs), n)``."""
    return np.stack([simulate_response(fit, rng) for rng in rngs]) if rngs else np.empty((0, fit.n), int)


def simulate_response(fit: FittedModel, rng: np.random.Generator) -> np.ndarray:
    """Draw a response vector from the fitted model at its estimated parameters.

    Quasi-Poisson has no generative model; responses are drawn from an NB1
    whose variance matches ``phi_hat * mu`` when ``phi_hat > 1``, and from a
    Poisson otherwise.
    """
    mu = fit.mu_hat
    family = fit.family
    if family is FamilyTag.POISSON:
        return rng.poisson(mu)
    if family is FamilyTag.QUASIPOISSON:
        if fit.phi_hat > 1.0:
            excess = fit.phi_hat - 1.0
            return rng.poisson(rng.gamma(mu / excess, excess))
        return rng.poisson(mu)
    if family is FamilyTag.NBLIN:
        return rng.poisson(rng.gamma(mu / fit.phi_hat, fit.phi_hat))
    if family is FamilyTag.NBQUAD:
        return rng.poisson(rng.gamma(fit.phi_hat, mu / fit.phi_hat))
    structural = rng.random(mu.shape) < fit.nu_fitted
    if family is FamilyTag.ZIP:
        counts = rng.poisson(mu)
    else:
        counts = rng.poisson(rng.gamma(fit.phi_hat, mu / fit.phi_hat))
    return np.where(structural, 0, counts)
