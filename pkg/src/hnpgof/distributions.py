"""Count distributions used throughout the package.

Six families are supported. Poisson, NB-lin (NB1, variance ``mu * (1 + phi)``),
NB-quad (NB2 with size ``phi``, variance ``mu + mu**2 / phi``) and the two
zero-inflated mixtures ZIP and ZINB have proper probability mass functions.
Quasi-Poisson only specifies the first two moments, so it has a variance
function but no pmf and no sampler.

All functions broadcast over array-valued ``y`` and ``mu``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln


class FamilyTag(str, enum.Enum):
    POISSON = "poisson"
    QUASIPOISSON = "quasipoisson"
    NBLIN = "nblin"
    NBQUAD = "nbquad"
    ZIP = "zip"
    ZINB = "zinb"

    @property
    def label(self) -> str:
        return _LABELS[self]

    @property
    def zero_inflated(self) -> bool:
        return self in (FamilyTag.ZIP, FamilyTag.ZINB)

    @property
    def has_likelihood(self) -> bool:
        return self is not FamilyTag.QUASIPOISSON

    @classmethod
    def parse(cls, value: "str | FamilyTag") -> "FamilyTag":
        if isinstance(value, FamilyTag):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        key = _ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown family {value!r}") from None


_LABELS = {
    FamilyTag.POISSON: "Poisson",
    FamilyTag.QUASIPOISSON: "Quasi-Poisson",
    FamilyTag.NBLIN: "NB-lin",
    FamilyTag.NBQUAD: "NB-quad",
    FamilyTag.ZIP: "ZIP",
    FamilyTag.ZINB: "ZINB",
}

_ALIASES = {
    "quasi": "quasipoisson",
    "qp": "quasipoisson",
    "nb1": "nblin",
    "nb2": "nbquad",
    "negbin": "nbquad",
}

#: Canonical family order. Also used for tie-breaking and seed derivation.
FAMILY_ORDER: tuple[FamilyTag, ...] = tuple(FamilyTag)


class NoLikelihoodError(ValueError):
    """Raised when a pmf or sampler is requested for quasi-Poisson."""


@dataclass(frozen=True)
class DistParams:
    """Parameters of a count distribution.

    ``phi`` is the NB1 dispersion for NB-lin and the NB2 size for NB-quad/ZINB
    (so ``zeta = 1 / phi`` multiplies ``mu**2`` in the variance). ``nu`` is the
    zero-inflation probability.
    """

    mu: float | np.ndarray
    phi: float | np.ndarray = 1.0
    nu: float | np.ndarray = 0.0

    @property
    def zeta(self):
        return 1.0 / np.asarray(self.phi, dtype=float)

    def validate(self) -> None:
        mu = np.asarray(self.mu, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        nu = np.asarray(self.nu, dtype=float)
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise ValueError("mu must be finite and > 0")
        if not np.all(np.isfinite(phi)) or np.any(phi <= 0):
            raise ValueError("phi must be finite and > 0")
        if not np.all(np.isfinite(nu)) or np.any(nu < 0) or np.any(nu >= 1):
            raise ValueError("nu must lie in [0, 1)")


def _check_counts(y) -> np.ndarray:
    arr = np.asarray(y)
    if np.any(arr < 0) or np.any(np.floor(arr) != arr):
        raise ValueError("counts must be nonnegative integers")
    return arr.astype(float)


def _poisson_logpmf(y, mu):
    return y * np.log(mu) - mu - gammaln(y + 1.0)


def _nb2_logpmf(y, mu, size):
    return (
        gammaln(y + size)
        - gammaln(size)
        - gammaln(y + 1.0)
        + size * (np.log(size) - np.log(size + mu))
        + y * (np.log(mu) - np.log(size + mu))
    )


def _nb1_logpmf(y, mu, phi):
    r = mu / phi
    c = np.log1p(phi)
    return gammaln(y + r) - gammaln(r) - gammaln(y + 1.0) - r * c + y * (np.log(phi) - c)


def _zero_inflate(y, nu, count_logpmf):
    with np.errstate(divide="ignore"):
        log_nu = np.log(nu)
    log_keep = np.log1p(-nu)
    at_zero = np.logaddexp(log_nu, log_keep + count_logpmf)
    return np.where(y == 0, at_zero, log_keep + count_logpmf)


def log_pmf(family, y, params: DistParams):
    """Log probability of the count(s) ``y``."""
    family = FamilyTag.parse(family)
    if family is FamilyTag.QUASIPOISSON:
        raise NoLikelihoodError("no likelihood available for quasi-Poisson")
    params.validate()
    y = _check_counts(y)
    mu = np.asarray(params.mu, dtype=float)
    phi = np.asarray(params.phi, dtype=float)
    nu = np.asarray(params.nu, dtype=float)
    if family is FamilyTag.POISSON:
        out = _poisson_logpmf(y, mu)
    elif family is FamilyTag.NBLIN:
        out = _nb1_logpmf(y, mu, phi)
    elif family is FamilyTag.NBQUAD:
        out = _nb2_logpmf(y, mu, phi)
    elif family is FamilyTag.ZIP:
        out = _zero_inflate(y, nu, _poisson_logpmf(y, mu))
    else:
        out = _zero_inflate(y, nu, _nb2_logpmf(y, mu, phi))
    return out[()] if isinstance(out, np.ndarray) else out


def marginal_mean(family, params: DistParams):
    family = FamilyTag.parse(family)
    params.validate()
    mu = np.asarray(params.mu, dtype=float)
    if family.zero_inflated:
        mu = (1.0 - np.asarray(params.nu, dtype=float)) * mu
    return mu[()]


def variance_function(family, params: DistParams):
    """Marginal variance of the count at the given parameters."""
    family = FamilyTag.parse(family)
    params.validate()
    mu = np.asarray(params.mu, dtype=float)
    phi = np.asarray(params.phi, dtype=float)
    nu = np.asarray(params.nu, dtype=float)
    if family is FamilyTag.POISSON:
        var = mu
    elif family is FamilyTag.QUASIPOISSON:
        var = phi * mu
    elif family is FamilyTag.NBLIN:
        var = mu * (1.0 + phi)
    elif family is FamilyTag.NBQUAD:
        var = mu + mu**2 / phi
    elif family is FamilyTag.ZIP:
        var = (1.0 - nu) * mu * (1.0 + nu * mu)
    else:
        var = (1.0 - nu) * mu * (1.0 + mu / phi + nu * mu)
    return var[()]


def sample(family, params: DistParams, rng: np.random.Generator, size=None):
    """Draw counts; ``size`` defaults to the broadcast shape of the parameters.

    Negative binomials are drawn as gamma-Poisson mixtures, zero-inflated
    families as a Bernoulli(nu) structural zero followed by a count draw.
    """
    family = FamilyTag.parse(family)
    if family is FamilyTag.QUASIPOISSON:
        raise NoLikelihoodError(
            "quasi-Poisson has no sampling distribution; use surrogate simulation"
        )
    params.validate()
    mu = np.asarray(params.mu, dtype=float)
    phi = np.asarray(params.phi, dtype=float)
    nu = np.asarray(params.nu, dtype=float)
    if size is None:
        size = np.broadcast_shapes(mu.shape, phi.shape, nu.shape)
    if family is FamilyTag.POISSON:
        return rng.poisson(np.broadcast_to(mu, size))
    if family is FamilyTag.NBLIN:
        return rng.poisson(rng.gamma(mu / phi, phi, size=size))
    if family is FamilyTag.NBQUAD:
        return rng.poisson(rng.gamma(phi, mu / phi, size=size))
    structural = rng.random(size) < nu
    if family is FamilyTag.ZIP:
        counts = rng.poisson(np.broadcast_to(mu, size))
    else:
        counts = rng.poisson(rng.gamma(phi, mu / phi, size=size))
    return np.where(structural, 0, counts)
