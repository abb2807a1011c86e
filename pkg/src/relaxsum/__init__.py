"""Coverage-reward policy-gradient laboratory for multi-document summarization."""
from relaxsum.coverage_reward import (
    CoverageVector, DocumentSet, RewardBreakdown, RewardConfig, combined_reward, coverage_term, coverage_vector,
    cv_inverse,
)
from relaxsum.estimators import (
    EnumerationBudgetError, Estimator, EstimatorStats, estimator_statistics, exact_gradient_oracle, reinforce_estimate,
    relax_estimate,
)
from relaxsum.kernels import BACKEND
from relaxsum.text_metrics import Fragment, Origin, TokenSeq, Variant, efc, extract_fragments, rouge_f1, tokenize

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CoverageVector", "DocumentSet", "EnumerationBudgetError", "Estimator", "EstimatorStats",
    "Fragment", "Origin", "RewardBreakdown", "RewardConfig", "TokenSeq", "Variant", "combined_reward",
    "coverage_term", "coverage_vector", "cv_inverse", "efc", "estimator_statistics", "exact_gradient_oracle",
    "extract_fragments", "reinforce_estimate", "relax_estimate", "rouge_f1", "tokenize",
]
