"""Backoff n-gram language model adaptation to marginal constraints.

Adapts an out-of-domain ARPA model so that chosen n-gram marginals match
in-domain targets while staying minimally far from the original model,
with per-iteration cost linear in the model size plus the number of
constraints.  See the ``mdilm`` command line tool for the end-to-end
pipeline.
"""
from .arpa import (ArpaError, BackoffModel, ValidationReport, Vocabulary,
                   parse_arpa, validate_model, write_arpa)
from .mdi import (AdaptationError, GisState, NormalizerTable, PackedModel,
                  ScalingField, available_backends, build_adapted_model,
                  compute_history_weights, compute_marginals,
                  compute_normalizers, get_kernels, gis_step, run_gis,
                  scaling_factor)
from .stats import (Constraint, ConstraintSet, CountTable, HistoryDistribution,
                    count_ngrams, estimate_backoff_lm, history_distribution,
                    select_constraints)

__version__ = "0.1.0"

__all__ = [
    "ArpaError", "BackoffModel", "ValidationReport", "Vocabulary",
    "parse_arpa", "validate_model", "write_arpa",
    "AdaptationError", "GisState", "NormalizerTable", "PackedModel",
    "ScalingField", "available_backends", "build_adapted_model",
    "compute_history_weights", "compute_marginals", "compute_normalizers",
    "get_kernels", "gis_step", "run_gis", "scaling_factor",
    "Constraint", "ConstraintSet", "CountTable", "HistoryDistribution",
    "count_ngrams", "estimate_backoff_lm", "history_distribution",
    "select_constraints",
    "__version__",
]
