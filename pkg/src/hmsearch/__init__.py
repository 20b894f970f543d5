"""Human-model similarity (HMS) for hyperparameter search and early stopping."""

from __future__ import annotations

__version__ = "0.1.0"

from .earlystop import (
    MetricTrajectory,
    SavingsReport,
    compute_threshold,
    savings_analysis,
    stability_stop,
    threshold_stop,
)
from .evaluation import MatchingTrial, cosine_similarity, match_trial, matching_accuracy, next_frame_mse
from .rsa import ActivationMatrix, ActivationSequence, Rdm, average_rdms, build_rdm, dissimilarity, hms, temporal_pool
from .search import HyperparameterSample, HyperparameterSpace, run_search, sample_space
from .stats import (
    MetricTable,
    bonferroni,
    correlation_matrix,
    partial_spearman,
    spearman_rho,
    spearman_with_p,
    summarize,
)
