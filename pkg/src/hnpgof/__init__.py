"""Half-normal plot envelopes and distance-based goodness-of-fit for count models."""

__version__ = "0.1.0"

from .distributions import FAMILY_ORDER, DistParams, FamilyTag, NoLikelihoodError
from .envelope import (
    DistanceConfig,
    DistanceResult,
    DistanceSummary,
    Envelope,
    EnvelopeError,
    PenaltyHyper,
    build_envelope,
    distance,
    extended_distance,
    halfnormal_scores,
    repeat_hnp,
)
from .fitting import (
    ConvergenceWarning,
    Dataset,
    FitConfig,
    FitError,
    FittedModel,
    bic,
    fit_model,
    pearson_residuals,
    simulate_response,
)
from .simulation import ScenarioConfig, ScenarioResult, S2StudyConfig, run_appendix_s2_study, run_scenario

__all__ = [
    "FAMILY_ORDER",
    "ConvergenceWarning",
    "Dataset",
    "DistParams",
    "DistanceConfig",
    "DistanceResult",
    "DistanceSummary",
    "Envelope",
    "EnvelopeError",
    "FamilyTag",
    "FitConfig",
    "FitError",
    "FittedModel",
    "NoLikelihoodError",
    "PenaltyHyper",
    "S2StudyConfig",
    "ScenarioConfig",
    "ScenarioResult",
    "bic",
    "build_envelope",
    "distance",
    "extended_distance",
    "fit_model",
    "halfnormal_scores",
    "pearson_residuals",
    "repeat_hnp",
    "run_appendix_s2_study",
    "run_scenario",
    "simulate_response",
]
