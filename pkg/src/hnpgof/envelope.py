"""Half-normal plots with simulated envelopes and envelope-median distances."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from ._parallel import derive_seed, derived_rng, ordered_map
from .fitting import (
    Dataset,
    FitConfig,
    FittedModel,
    fit_batch,
    pearson_batch,
    pearson_residuals,
    simulate_response,
)

log = logging.getLogger(__name__)

MAX_REDRAWS = 20
ENVELOPE_COLUMNS = ("index", "score", "observed", "lower", "median", "upper")

PENALTIES = ("constant", "linear", "ratio", "logistic", "tanh")
SCALINGS = ("none", "inverse-linear", "inverse-squared")


class EnvelopeError(RuntimeError):
    pass


def halfnormal_scores(n: int) -> np.ndarray:
    """Approximate expected half-normal order statistics for a sample of size ``n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    i = np.arange(1, n + 1)
    return ndtri((i + n - 0.125) / (2 * n + 0.5))


@dataclass
class Envelope:
    scores: np.ndarray
    observed: np.ndarray
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    alpha: float
    n_sim: int
    seed: int

    @property
    def n(self) -> int:
        return self.observed.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def outside(self) -> np.ndarray:
        """Points not strictly inside ``(lower, upper)``."""
        return ~((self.observed > self.lower) & (self.observed < self.upper))

    @property
    def outside_count(self) -> int:
        return int(self.outside.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(ENVELOPE_COLUMNS)
        for i in range(self.n):
            writer.writerow(
                [i + 1]
                + [
                    repr(float(v[i]))
                    for v in (self.scores, self.observed, self.lower, self.median, self.upper)
                ]
            )
        return buf.getvalue()


def envelope_from_simulations(
    observed: np.ndarray, simulated: np.ndarray, alpha: float = 0.05, seed: int = 0
) -> Envelope:
    """Assemble an envelope from observed and simulated absolute residuals.

    ``simulated`` holds one row per simulated sample; rows are sorted here, so
    callers may pass raw absolute residuals.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    simulated = np.sort(np.abs(np.atleast_2d(simulated)), axis=1)
    observed = np.sort(np.abs(np.asarray(observed, dtype=float)))
    if simulated.shape[1] != observed.shape[0]:
        raise ValueError("simulated residual sets must match the observed length")
    lower, median, upper = np.quantile(
        simulated, [alpha / 2, 0.5, 1 - alpha / 2], axis=0, method="linear"
    )
    return Envelope(
        scores=halfnormal_scores(observed.shape[0]),
        observed=observed,
        lower=lower,
        median=median,
        upper=upper,
        alpha=alpha,
        n_sim=simulated.shape[0],
        seed=seed,
    )


def _simulated_residuals(fit: FittedModel, X: np.ndarray, seed: int, slots: Sequence[int]):
    """Sorted absolute Pearson residuals from refits to simulated samples, one row per slot."""
    slots = list(slots)
    cfg = fit.config
    if not slots:
        return np.empty((0, fit.n))
    attempt = np.zeros(len(slots), dtype=int)
    Y = np.stack([simulate_response(fit, derived_rng(seed, j, 0)) for j in slots])
    out = np.empty(Y.shape, dtype=float)
    todo = np.arange(len(slots))
    while todo.size:
        batch = fit_batch(fit.family, X, Y[todo], cfg)
        ok = ~batch.failed
        if ok.any():
            with np.errstate(invalid="ignore", divide="ignore"):
                res = pearson_batch(
                    fit.family,
                    Y[todo][ok],
                    batch.mu[ok],
                    None if batch.disp is None else batch.disp[ok],
                    None if batch.nu is None else batch.nu[ok],
                )
            finite = np.all(np.isfinite(res), axis=1)
            good = np.flatnonzero(ok)[finite]
            out[todo[good]] = np.sort(np.abs(res[finite]), axis=1)
            ok[np.flatnonzero(ok)[~finite]] = False
        failed = todo[~ok]
        for idx in failed:
            attempt[idx] += 1
            log.debug(
                "refit of %s failed for simulation %d (attempt %d); redrawing",
                fit.family.label, slots[idx], attempt[idx],
            )
            if attempt[idx] > MAX_REDRAWS:
                raise EnvelopeError(
                    f"{fit.family.label} refit failed {MAX_REDRAWS} times for simulation {slots[idx]}"
                )
            Y[idx] = simulate_response(fit, derived_rng(seed, slots[idx], attempt[idx]))
        todo = failed
    return out


def _chunk_residuals(args):
    fit, X, seed, slots = args
    return _simulated_residuals(fit, X, seed, slots)


def build_envelope(
    fit: FittedModel,
    data: Dataset,
    n_sim: int = 99,
    alpha: float = 0.05,
    seed: int = 0,
    jobs: int = 1,
) -> Envelope:
    """Simulate from ``fit``, refit each sample and take per-order-statistic percentiles.

    Simulation ``j`` draws from a stream derived from ``(seed, j)`` alone, so
    the envelope is identical for any ``jobs``.
    """
    if n_sim < 1:
        raise ValueError("n_sim must be >= 1")
    observed = np.abs(pearson_residuals(fit, data))
    slots = np.arange(n_sim)
    if jobs > 1:
        chunks = [c for c in np.array_split(slots, jobs) if c.size]
        parts = ordered_map(_chunk_residuals, [(fit, data.X, seed, c) for c in chunks], jobs)
        simulated = np.concatenate(list(parts), axis=0)
    else:
        simulated = _simulated_residuals(fit, data.X, seed, slots)
    return envelope_from_simulations(observed, simulated, alpha, seed)


# --------------------------------------------------------------------------- #
# Distances
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class PenaltyHyper:
    """Fixed hyperparameters of the boundary penalty (not the envelope level)."""

    alpha_pen: float = 1.0
    gamma: float = 1.0
    gamma1: float = 1.0
    gamma2: float = 0.5
    delta: float = 1.0
    eta: float = 1.0


@dataclass(frozen=True)
class DistanceConfig:
    """Distance settings.

    ``penalty`` multiplies the contribution of points outside the envelope
    by ``g(b)``, where ``b`` is the distance to the nearest violated bound:
    constant ``1``; linear ``a + gamma*b``; ratio ``(a + gamma1*b)/(1 + gamma2*b)``;
    logistic ``(a + gamma)/(1 + exp(-delta*(b - eta)))``; tanh
    ``a + gamma*tanh(delta*b)``, with ``a = alpha_pen``. ``scaling`` divides
    every contribution by ``1``, ``w`` or ``w**2`` (``w = upper - lower``).
    """

    p: int = 1
    penalty: str = "constant"
    scaling: str = "none"
    hyper: PenaltyHyper = field(default_factory=PenaltyHyper)

    def __post_init__(self):
        if self.p not in (1, 2):
            raise ValueError("p must be 1 or 2")
        if self.penalty not in PENALTIES:
            raise ValueError(f"penalty must be one of {PENALTIES}")
        if self.scaling not in SCALINGS:
            raise ValueError(f"scaling must be one of {SCALINGS}")
        if not all(np.isfinite(v) for v in asdict(self.hyper).values()):
            raise ValueError("penalty hyperparameters must be finite")


@dataclass
class DistanceResult:
    total: float
    contributions: np.ndarray
    config: DistanceConfig
    outside_count: int


def _check_lengths(env: Envelope):
    n = env.observed.shape[0]
    if any(v.shape != (n,) for v in (env.median, env.lower, env.upper)):
        raise ValueError("envelope vectors must have equal length")


def distance(env: Envelope, p: int = 1) -> DistanceResult:
    """Sum of ``|r_(i) - m_i|**p`` over the order statistics."""
    return extended_distance(env, DistanceConfig(p=p))


def boundary_distance(env: Envelope) -> np.ndarray:
    """Distance from each residual to the envelope bound it violates (0 inside)."""
    r, lo, up = env.observed, env.lower, env.upper
    return np.where(r > up, r - up, np.where(r < lo, lo - r, 0.0))


def penalty_value(penalty: str, b, hyper: PenaltyHyper = PenaltyHyper()):
    h = hyper
    b = np.asarray(b, dtype=float)
    if penalty == "constant":
        return np.ones_like(b)
    if penalty == "linear":
        return h.alpha_pen + h.gamma * b
    if penalty == "ratio":
        return (h.alpha_pen + h.gamma1 * b) / (1.0 + h.gamma2 * b)
    if penalty == "logistic":
        return (h.alpha_pen + h.gamma) / (1.0 + np.exp(-h.delta * (b - h.eta)))
    if penalty == "tanh":
        return h.alpha_pen + h.gamma * np.tanh(h.delta * b)
    raise ValueError(f"unknown penalty {penalty!r}")


def extended_distance(env: Envelope, cfg: DistanceConfig) -> DistanceResult:
    _check_lengths(env)
    dev = np.abs(env.observed - env.median)
    contrib = dev if cfg.p == 1 else dev**2
    outside = env.outside
    if cfg.penalty != "constant":
        b = boundary_distance(env)
        g = penalty_value(cfg.penalty, b, cfg.hyper)
        if cfg.penalty == "ratio" and np.any(1.0 + cfg.hyper.gamma2 * b[outside] <= 0):
            raise ValueError("ratio penalty denominator must stay positive")
        contrib = np.where(outside, contrib * g, contrib)
    if cfg.scaling != "none":
        w = env.width
        if np.any(w <= 0):
            raise EnvelopeError("degenerate envelope width")
        contrib = contrib / (w if cfg.scaling == "inverse-linear" else w**2)
    return DistanceResult(
        total=float(np.sum(contrib)),
        contributions=contrib,
        config=cfg,
        outside_count=int(outside.sum()),
    )


# --------------------------------------------------------------------------- #
# Repeated envelopes
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class DistanceSummary:
    p: int
    median: float
    iqr: float
    sd: float
    values: np.ndarray


def summarize_distances(values, p: int) -> DistanceSummary:
    values = np.asarray(values, dtype=float)
    q1, q3 = np.percentile(values, [25, 75])
    sd = float(np.std(values, ddof=1)) if values.size > 1 else float("nan")
    return DistanceSummary(p=p, median=float(np.median(values)), iqr=float(q3 - q1), sd=sd,
                           values=values)


def _one_repeat(args):
    fit, data, seed, n_sim, alpha, ps = args
    env = build_envelope(fit, data, n_sim=n_sim, alpha=alpha, seed=seed)
    return [distance(env, p).total for p in ps]


def repeat_hnp(
    fit: FittedModel,
    data: Dataset,
    reps: int = 100,
    p: int | Sequence[int] = (1, 2),
    seed: int = 0,
    n_sim: int = 99,
    alpha: float = 0.05,
    jobs: int = 1,
) -> dict[int, DistanceSummary]:
    """Median, IQR and SD of the distance over ``reps`` independent envelopes."""
    if reps < 2:
        raise ValueError("reps must be >= 2")
    ps = (p,) if isinstance(p, int) else tuple(p)
    tasks = [(fit, data, derive_seed(seed, r), n_sim, alpha, ps) for r in range(reps)]
    totals = np.array(list(ordered_map(_one_repeat, tasks, jobs)))
    return {q: summarize_distances(totals[:, j], q) for j, q in enumerate(ps)}


__all__ = [
    "ENVELOPE_COLUMNS",
    "PENALTIES",
    "SCALINGS",
    "DistanceConfig",
    "DistanceResult",
    "DistanceSummary",
    "Envelope",
    "EnvelopeError",
    "PenaltyHyper",
    "boundary_distance",
    "build_envelope",
    "distance",
    "envelope_from_simulations",
    "extended_distance",
    "halfnormal_scores",
    "penalty_value",
    "repeat_hnp",
    "summarize_distances",
]
