"""Statistical and algebraic checks of sampled matrices against deterministic predictions."""

from ._common import DEFAULT_ALPHA, DEFAULT_C, Verdict, calibrated, fraction_passing
from .counting import (
    CountingReport,
    GapReport,
    RigidityReport,
    band_quantiles,
    classify_tau,
    counting_bound,
    counting_discrepancy,
    empty_gap_check,
    gap_margins,
    rigidity_check,
    rigidity_margins,
)
from .delocalization import DelocalizationReport, delocalization_check, max_overlap, random_unit_probes
from .local_law import (
    AnisotropicReport,
    LocalLawReport,
    PerturbationVector,
    ResolventData,
    anisotropic_check,
    anisotropic_errors,
    default_weights,
    local_law_check,
    perturbation_d,
    random_probe_pairs,
    resolvent,
    ward_error,
)
from .measure import MeasureDistance, empirical_stieltjes, piecewise_linear_stieltjes, stieltjes_measure_distance
from .universality import GapStatistics, bump, gap_statistics, ks_two_sample, rescaled_gaps

__all__ = [name for name in dir() if not name.startswith("_")]
