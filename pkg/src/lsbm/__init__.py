"""Spectral exact recovery in the labeled stochastic block model."""

from .errors import LsbmError
from .model import (
    DivergenceResult,
    LsbmParams,
    ch_divergence,
    critical_t,
    load_params,
    spectral_condition_check,
    theta_matrix,
    validate_params,
)
from .sampler import (
    CommunityAssignment,
    LabeledGraph,
    is_balanced,
    label_matrix,
    sample_assignment,
    sample_graph,
    sample_labels,
)
from .spectral import (
    SpectralBasis,
    WeightSet,
    build_reference,
    reference_eigenpairs,
    reference_partition,
    solve_weights,
    top_k_eigenpairs,
    z_vector,
)
from .inference import CandidateLabeling, candidate_labeling, log_posterior, spectral_recover, spectral_scores
from .diagnostics import DiagnosticsReport, degree_profile, genie_estimate, separation_report
from .harness import ExperimentConfig, TrialRecord, agreement_metrics, run_sweep, run_trial

__all__ = [name for name in dir() if not name.startswith("_")]
