"""Multi-document coverage reward mixed with ROUGE-L F1.

The coverage of a summary is summarised by the inverse coefficient of
variation of its per-document EFC scores (high when coverage is both large
and even). A prediction is scored against its reference on that statistic,
scaled by the length ratio, and added to ROUGE-L F1 with weight ``beta``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

from relaxsum.text_metrics import Variant, efc, rouge_f1
from relaxsum.vocab import END_SEP

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DocumentSet:
    documents: tuple[tuple[int, ...], ...]
    separator_token: int = END_SEP

    def __post_init__(self):
        docs = tuple(tuple(int(t) for t in d) for d in self.documents)
        if any(len(d) == 0 for d in docs):
            raise ValueError("documents must be nonempty")
        object.__setattr__(self, "documents", docs)

    def __len__(self) -> int:
        return len(self.documents)

    def __getitem__(self, i):
        return self.documents[i]

    def __iter__(self):
        return iter(self.documents)


@dataclass(frozen=True)
class CoverageVector:
    values: tuple[float, ...]
    degenerate: bool = False

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class RewardConfig:
    beta: float = 1.0
    sigma_epsilon: float = 1e-8
    cv_epsilon: float = 1e-8
    min_fragment_len: int = 1

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.sigma_epsilon <= 0 or self.cv_epsilon <= 0:
            raise ValueError("epsilons must be positive")


@dataclass(frozen=True)
class RewardBreakdown:
    rouge_l_f1: float
    r_cov: float
    r_cov_hat: float
    combined: float
    pred_len: int
    ref_len: int
    beta: float
    coverage_pred: CoverageVector = field(repr=False, default=None)
    degenerate: bool = False


def coverage_vector(summary: Sequence[int], docs: DocumentSet, min_fragment_len: int = 1) -> CoverageVector:
    if len(docs) == 0:
        raise ValueError("empty document set")
    if len(summary) == 0:
        return CoverageVector(tuple(0.0 for _ in docs), degenerate=True)
    return CoverageVector(tuple(efc(summary, d, min_fragment_len) for d in docs))


def sample_std(values: Sequence[float]) -> float:
    """Sample (n-1) standard deviation; 0.0 for fewer than two values."""
    n = len(values)
    if n < 2:
        return 0.0
    mu = math.fsum(values) / n
    return math.sqrt(math.fsum((v - mu) ** 2 for v in values) / (n - 1))


def cv_inverse(v: CoverageVector | Sequence[float], cfg: RewardConfig = RewardConfig()) -> float:
    values = v.values if isinstance(v, CoverageVector) else tuple(v)
    if len(values) == 0:
        raise ValueError("coverage vector must be nonempty")
    mu = math.fsum(values) / len(values)
    return mu / (sample_std(values) + cfg.sigma_epsilon)


def coverage_score_reward(c_pred: float, c_ref: float, cfg: RewardConfig = RewardConfig()) -> float:
    """Reference-baselined coverage reward from the two inverse CVs."""
    return (c_pred - c_ref) / (c_pred + cfg.cv_epsilon)


def coverage_term(pred: Sequence[int], ref: Sequence[int], docs: DocumentSet,
                  cfg: RewardConfig = RewardConfig()) -> tuple[float, float]:
    """Return ``(r_cov, r_cov_hat)``; ``r_cov_hat`` is ``r_cov`` times ``|pred|/|ref|``."""
    r_cov, r_cov_hat, _, _ = _coverage_parts(pred, ref, docs, cfg)
    return r_cov, r_cov_hat


def _coverage_parts(pred, ref, docs, cfg):
    if len(ref) == 0:
        raise ValueError("empty reference")
    cov_p = coverage_vector(pred, docs, cfg.min_fragment_len)
    cov_r = coverage_vector(ref, docs, cfg.min_fragment_len)
    r_cov = coverage_score_reward(cv_inverse(cov_p, cfg), cv_inverse(cov_r, cfg), cfg)
    if abs(r_cov) > 10:
        log.info("large coverage reward r_cov=%.4g (|pred|=%d)", r_cov, len(pred))
    return r_cov, r_cov * (len(pred) / len(ref)), cov_p, cov_r


def combined_reward(pred: Sequence[int], ref: Sequence[int], docs: DocumentSet,
                    cfg: RewardConfig = RewardConfig()) -> RewardBreakdown:
    r_cov, r_cov_hat, cov_p, _ = _coverage_parts(pred, ref, docs, cfg)
    rl = rouge_f1(pred, ref, Variant.RL)
    return RewardBreakdown(
        rouge_l_f1=rl,
        r_cov=r_cov,
        r_cov_hat=r_cov_hat,
        combined=rl + cfg.beta * r_cov_hat,
        pred_len=len(pred),
        ref_len=len(ref),
        beta=cfg.beta,
        coverage_pred=cov_p,
        degenerate=cov_p.degenerate,
    )
