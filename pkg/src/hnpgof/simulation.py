"""Simulation studies: data from parent models, model selection by distance and BIC."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from ._parallel import derive_seed, derived_rng, ordered_map
from .distributions import FAMILY_ORDER, DistParams, FamilyTag, sample
from .envelope import (
    PENALTIES,
    SCALINGS,
    DistanceConfig,
    Envelope,
    EnvelopeError,
    PenaltyHyper,
    build_envelope,
    distance,
    extended_distance,
)
from .fitting import ConvergenceWarning, Dataset, FitConfig, FitError, bic, fit_model

BASE_FAMILIES = (FamilyTag.POISSON, FamilyTag.QUASIPOISSON, FamilyTag.NBLIN, FamilyTag.NBQUAD)
DEFAULT_BETA = (1.0, 0.5)


def default_candidates(parent: FamilyTag) -> tuple[FamilyTag, ...]:
    return FAMILY_ORDER if parent.zero_inflated else BASE_FAMILIES


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario.

    For NB-quad and ZINB parents ``phi`` grades overdispersion the same way it
    does for NB-lin (larger is stronger): it is the coefficient of ``mu**2``
    in the variance, so counts are drawn with size ``1 / phi``. Set
    ``phi_is_size`` to pass the size directly instead.
    """

    parent: FamilyTag
    n: int = 100
    phi: float = 1.0
    nu: float = 0.0
    beta: tuple[float, float] = DEFAULT_BETA
    reps: int = 200
    candidate_families: tuple[FamilyTag, ...] = ()
    p_values: tuple[int, ...] = (1, 2)
    seed: int = 0
    underdispersed: bool = False
    n_sim: int = 99
    alpha: float = 0.05
    zero_model: str = "intercept"
    phi_is_size: bool = False
    name: str = ""

    def __post_init__(self):
        parent = FamilyTag.parse(self.parent)
        object.__setattr__(self, "parent", parent)
        fams = tuple(FamilyTag.parse(f) for f in self.candidate_families) or default_candidates(parent)
        object.__setattr__(self, "candidate_families", fams)
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "p_values", tuple(int(p) for p in self.p_values))
        if parent is FamilyTag.QUASIPOISSON:
            raise ValueError("quasi-Poisson has no generating distribution; use underdispersed")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.n < 3:
            raise ValueError("n must be >= 3")
        if len(self.beta) != 2:
            raise ValueError("beta must be a (beta0, beta1) pair")
        if not set(self.p_values) <= {1, 2} or not self.p_values:
            raise ValueError("p values must be drawn from {1, 2}")
        if not parent.zero_inflated and self.nu != 0:
            raise ValueError("nu must be 0 unless the parent is zero-inflated")
        if parent.zero_inflated and not 0 <= self.nu < 1:
            raise ValueError("nu must lie in [0, 1)")
        if parent in (FamilyTag.POISSON, FamilyTag.ZIP) and self.phi != 1:
            raise ValueError("phi is fixed at 1 for Poisson and ZIP parents")
        if not self.phi > 0:
            raise ValueError("phi must be > 0")
        if self.underdispersed and parent is not FamilyTag.POISSON:
            raise ValueError("the underdispersed construction applies to a Poisson parent")
        if self.n_sim < 1:
            raise ValueError("n_sim must be >= 1")
        if self.zero_model not in ("intercept", "covariates"):
            raise ValueError("zero_model must be 'intercept' or 'covariates'")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        parts = [self.parent.value]
        if self.parent not in (FamilyTag.POISSON, FamilyTag.ZIP):
            parts.append(f"phi={self.phi:g}")
        if self.parent.zero_inflated:
            parts.append(f"nu={self.nu:g}")
        if self.underdispersed:
            parts.append("underdispersed")
        parts.append(f"n={self.n}")
        return " ".join(parts)


def parent_dispersion(cfg: ScenarioConfig) -> float:
    """The ``DistParams.phi`` used to draw from the parent."""
    if cfg.parent in (FamilyTag.NBQUAD, FamilyTag.ZINB) and not cfg.phi_is_size:
        return 1.0 / cfg.phi
    return cfg.phi


def generate_scenario_data(cfg: ScenarioConfig, rng: np.random.Generator) -> Dataset:
    """Covariate from N(0, 1), log-linear mean, response from the parent model.

    The underdispersed variant halves Poisson(2 mu) draws (rounding down),
    which keeps the mean near ``mu`` with variance about ``mu / 2``.
    """
    x = rng.standard_normal(cfg.n)
    mu = np.exp(cfg.beta[0] + cfg.beta[1] * x)
    if cfg.underdispersed:
        y = rng.poisson(2.0 * mu) // 2
    else:
        y = sample(cfg.parent, DistParams(mu=mu, phi=parent_dispersion(cfg), nu=cfg.nu), rng)
    return Dataset.from_covariates(y, x, names=["x"])


@dataclass
class ReplicationRecord:
    replication: int
    family: FamilyTag
    distances: dict[int, float]
    bic: float | None
    loglik: float | None
    n_params: int
    converged: bool
    flags: tuple[str, ...]
    phi_hat: float | None = None
    nu_hat: float | None = None


@dataclass
class _Replication:
    index: int
    records: list[ReplicationRecord] = field(default_factory=list)
    failure: str | None = None
    extra: object = None


def _replicate(cfg: ScenarioConfig, r: int, on_envelope: Callable | None = None) -> _Replication:
    out = _Replication(index=r)
    data = generate_scenario_data(cfg, derived_rng(cfg.seed, r, 0))
    fit_cfg = FitConfig(zero_model=cfg.zero_model)
    extras = {}
    for family in cfg.candidate_families:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                fit = fit_model(family, data, fit_cfg)
            env_seed = derive_seed(cfg.seed, r, 1 + FAMILY_ORDER.index(family))
            env = build_envelope(fit, data, n_sim=cfg.n_sim, alpha=cfg.alpha, seed=env_seed)
            dists = {p: distance(env, p).total for p in cfg.p_values}
            if on_envelope is not None:
                extras[family] = on_envelope(env)
        except (FitError, EnvelopeError, ValueError) as exc:
            out.records = []
            out.failure = f"{family.label}: {exc}"
            return out
        out.records.append(
            ReplicationRecord(
                replication=r,
                family=family,
                distances=dists,
                bic=bic(fit) if fit.loglik is not None else None,
                loglik=fit.loglik,
                n_params=fit.n_params,
                converged=fit.converged,
                flags=fit.flags,
                phi_hat=fit.phi_hat,
                nu_hat=fit.nu_hat,
            )
        )
    out.extra = extras
    return out


def _replicate_task(args):
    cfg, r = args
    return _replicate(cfg, r)


def select_min(values: Sequence[tuple[FamilyTag, float, int]]) -> tuple[FamilyTag, bool]:
    """Family with the smallest value; ties go to fewer parameters, then canonical order."""
    best = min(v for _, v, _ in values)
    tied = [(f, k) for f, v, k in values if v == best or np.isclose(v, best, rtol=1e-12, atol=0.0)]
    tied.sort(key=lambda fk: (fk[1], FAMILY_ORDER.index(fk[0])))
    return tied[0][0], len(tied) > 1


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    records: list[ReplicationRecord]
    min_distance_counts: dict[int, dict[FamilyTag, int]]
    min_bic_counts: dict[FamilyTag, int]
    ties: dict[str, dict[FamilyTag, int]]
    failures: list[tuple[int, str]]

    @property
    def completed(self) -> int:
        return self.config.reps - len(self.failures)

    def values(self, family, p: int | None = None) -> np.ndarray:
        """Per-replication distances (or BIC when ``p`` is None) for one family."""
        family = FamilyTag.parse(family)
        rows = [r for r in self.records if r.family is family]
        if p is None:
            return np.array([np.nan if r.bic is None else r.bic for r in rows])
        return np.array([r.distances[p] for r in rows])


def _count(cfg: ScenarioConfig, replications: Iterable[_Replication]) -> ScenarioResult:
    families = cfg.candidate_families
    dist_counts = {p: {f: 0 for f in families} for p in cfg.p_values}
    bic_counts = {f: 0 for f in families if f.has_likelihood}
    ties = {key: {f: 0 for f in families} for key in [f"p={p}" for p in cfg.p_values] + ["BIC"]}
    records: list[ReplicationRecord] = []
    failures: list[tuple[int, str]] = []
    for rep in replications:
        if rep.failure is not None:
            failures.append((rep.index, rep.failure))
            continue
        records.extend(rep.records)
        for p in cfg.p_values:
            fam, tie = select_min([(r.family, r.distances[p], r.n_params) for r in rep.records])
            dist_counts[p][fam] += 1
            ties[f"p={p}"][fam] += tie
        with_bic = [(r.family, r.bic, r.n_params) for r in rep.records if r.bic is not None]
        if with_bic:
            fam, tie = select_min(with_bic)
            bic_counts[fam] += 1
            ties["BIC"][fam] += tie
    return ScenarioResult(cfg, records, dist_counts, bic_counts, ties, failures)


def run_scenario(
    cfg: ScenarioConfig,
    jobs: int = 1,
    on_replication: Callable[[_Replication], None] | None = None,
) -> ScenarioResult:
    """Run every replication of a scenario; identical output for any ``jobs``."""

    def stream():
        for rep in ordered_map(_replicate_task, [(cfg, r) for r in range(cfg.reps)], jobs):
            if on_replication is not None:
                on_replication(rep)
            yield rep

    return _count(cfg, stream())


FREQUENCY_COLUMNS = ("scenario", "family", "metric", "count", "reps", "ties")


def tabulate(result: ScenarioResult) -> tuple[list[dict], list[tuple[int, str]]]:
    """Long-format selection frequencies plus the failure manifest."""
    rows: list[dict] = []
    if result.completed == 0:
        return rows, list(result.failures)
    label = result.config.label
    for p, counts in result.min_distance_counts.items():
        for fam, count in counts.items():
            rows.append(dict(scenario=label, family=fam.label, metric=f"p={p}", count=count,
                             reps=result.completed, ties=result.ties[f"p={p}"][fam]))
    for fam, count in result.min_bic_counts.items():
        rows.append(dict(scenario=label, family=fam.label, metric="BIC", count=count,
                         reps=result.completed, ties=result.ties["BIC"][fam]))
    return rows, list(result.failures)


def plurality(counts: dict[FamilyTag, int]) -> FamilyTag:
    """Family with the strictly largest count (ties resolved in canonical order)."""
    return max(counts, key=lambda f: (counts[f], -FAMILY_ORDER.index(f)))


# --------------------------------------------------------------------------- #
# Penalised / width-scaled distance study
# --------------------------------------------------------------------------- #

S2_FAMILIES = (FamilyTag.POISSON, FamilyTag.NBLIN, FamilyTag.NBQUAD)
S2_PARENTS = (
    (FamilyTag.POISSON, 1.0),
    (FamilyTag.NBQUAD, 2.0),
    (FamilyTag.NBQUAD, 0.5),
    (FamilyTag.NBLIN, 5.0),
    (FamilyTag.NBLIN, 0.5),
)


@dataclass(frozen=True)
class S2StudyConfig:
    parents: tuple[tuple[FamilyTag, float], ...] = S2_PARENTS
    sample_sizes: tuple[int, ...] = (20, 50, 100)
    reps: int = 100
    families: tuple[FamilyTag, ...] = S2_FAMILIES
    penalties: tuple[str, ...] = PENALTIES
    scalings: tuple[str, ...] = SCALINGS
    p_values: tuple[int, ...] = (1, 2)
    hyper: PenaltyHyper = PenaltyHyper()
    beta: tuple[float, float] = DEFAULT_BETA
    seed: int = 0
    n_sim: int = 99
    alpha: float = 0.05
    phi_is_size: bool = False

    def __post_init__(self):
        parents = tuple((FamilyTag.parse(f), float(phi)) for f, phi in self.parents)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "families", tuple(FamilyTag.parse(f) for f in self.families))
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        for pen in self.penalties:
            if pen not in PENALTIES:
                raise ValueError(f"unknown penalty {pen!r}")
        for sc in self.scalings:
            if sc not in SCALINGS:
                raise ValueError(f"unknown scaling {sc!r}")

    def cells(self) -> list[ScenarioConfig]:
        return [
            ScenarioConfig(parent=parent, phi=phi, n=n, reps=self.reps, beta=self.beta,
                           candidate_families=self.families, p_values=self.p_values,
                           seed=self.seed, n_sim=self.n_sim, alpha=self.alpha,
                           phi_is_size=self.phi_is_size)
            for (parent, phi), n in itertools.product(self.parents, self.sample_sizes)
        ]

    def combos(self):
        return list(itertools.product(self.penalties, self.scalings, self.p_values))


S2_COLUMNS = ("parent", "phi", "n", "family", "penalty", "scaling", "p", "total", "log_total", "reps")


class _S2Metrics:
    def __init__(self, combos, hyper):
        self.combos = combos
        self.hyper = hyper

    def __call__(self, env: Envelope):
        return {
            (pen, sc, p): extended_distance(env, DistanceConfig(p, pen, sc, self.hyper)).total
            for pen, sc, p in self.combos
        }


def _s2_task(args):
    cell, r, combos, hyper = args
    return _replicate(cell, r, on_envelope=_S2Metrics(combos, hyper))


@dataclass
class S2Result:
    config: S2StudyConfig
    rows: list[dict]
    failures: list[tuple[str, int, str]]

    def rankings(self) -> dict[tuple, tuple[FamilyTag, ...]]:
        """Fitted families ordered by log-summed distance, per grid cell and metric."""
        groups: dict[tuple, list[tuple[float, FamilyTag]]] = {}
        for row in self.rows:
            key = (row["parent"], row["phi"], row["n"], row["penalty"], row["scaling"], row["p"])
            groups.setdefault(key, []).append((row["log_total"], FamilyTag.parse(row["family"])))
        return {k: tuple(f for _, f in sorted(v, key=lambda t: (t[0], FAMILY_ORDER.index(t[1]))))
                for k, v in groups.items()}

    def penalty_invariant(self) -> dict[tuple, bool]:
        """Whether the family ranking is the same under every penalty, per (cell, scaling, p)."""
        by = {}
        for (parent, phi, n, pen, sc, p), order in self.rankings().items():
            by.setdefault((parent, phi, n, sc, p), set()).add(order)
        return {k: len(v) == 1 for k, v in by.items()}


def run_appendix_s2_study(cfg: S2StudyConfig, jobs: int = 1) -> S2Result:
    """Summed penalised/scaled distances per fitted family over a grid of scenarios.

    Each cell reuses the scenario replication machinery with the same seeds,
    so the constant-penalty, unscaled column equals the summed base distance
    of the matching ``run_scenario`` call.
    """
    combos = cfg.combos()
    rows: list[dict] = []
    failures: list[tuple[str, int, str]] = []
    for cell in cfg.cells():
        tasks = [(cell, r, combos, cfg.hyper) for r in range(cell.reps)]
        per_rep = []
        for rep in ordered_map(_s2_task, tasks, jobs):
            if rep.failure is not None:
                failures.append((cell.label, rep.index, rep.failure))
            else:
                per_rep.append(rep.extra)
        for family in cfg.families:
            for combo in combos:
                vals = np.array([extra[family][combo] for extra in per_rep])
                total = float(np.sum(vals)) if vals.size else float("nan")
                pen, sc, p = combo
                rows.append(dict(
                    parent=cell.parent.value, phi=cell.phi, n=cell.n, family=family.label,
                    penalty=pen, scaling=sc, p=p, total=total,
                    log_total=float(np.log(total)) if total > 0 else float("-inf"),
                    reps=len(per_rep),
                ))
    return S2Result(cfg, rows, failures)
