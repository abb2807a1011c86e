import math
import statistics

import pytest
from hypothesis import given, settings, strategies as st

from relaxsum.coverage_reward import (
    CoverageVector, DocumentSet, RewardConfig, combined_reward, coverage_score_reward, coverage_term,
    coverage_vector, cv_inverse, sample_std,
)
from relaxsum.text_metrics import efc, rouge_f1

EPS = 1e-8
A, B, C = 10, 11, 12

token_lists = st.lists(st.integers(5, 9), min_size=1, max_size=8)
doc_sets = st.lists(token_lists, min_size=1, max_size=5).map(lambda ds: DocumentSet(tuple(map(tuple, ds))))


def oracle_cv_inverse(values):
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return statistics.fmean(values) / (sd + EPS)


def oracle_reward(pred, ref, docs, beta=1.0):
    """Coverage reward assembled from the per-document EFC definition with stdlib statistics."""
    cp = oracle_cv_inverse([efc(pred, d) for d in docs]) if pred else 0.0
    cr = oracle_cv_inverse([efc(ref, d) for d in docs])
    r_cov = (cp - cr) / (cp + EPS)
    return rouge_f1(pred, ref, "RL") + beta * r_cov * len(pred) / len(ref)


class TestCoverageVector:
    def test_self_coverage(self):
        assert coverage_vector([A, B], DocumentSet(((A, B),))).values == (1.0,)

    def test_per_document(self):
        assert coverage_vector([A], DocumentSet(((A, B), (C,)))).values == (1.0, 0.0)

    def test_empty_summary_is_flagged(self):
        v = coverage_vector([], DocumentSet(((A,), (B,))))
        assert v.values == (0.0, 0.0) and v.degenerate

    def test_empty_document_set(self):
        with pytest.raises(ValueError, match="empty document set"):
            coverage_vector([A], DocumentSet(()))

    def test_empty_document_rejected(self):
        with pytest.raises(ValueError):
            DocumentSet(((A,), ()))


class TestInverseCV:
    def test_zero_dispersion_guard(self):
        assert cv_inverse([0.5, 0.5, 0.5]) == pytest.approx(0.5 / EPS)

    def test_hand_computed(self):
        assert cv_inverse([0.2, 0.4]) == pytest.approx(0.3 / (math.sqrt(0.02) + EPS), rel=1e-12)
        assert cv_inverse([0.2, 0.4]) == pytest.approx(2.1213, abs=1e-4)

    def test_zero_mean(self):
        assert cv_inverse([0.0, 0.0]) == 0.0

    def test_single_document(self):
        assert cv_inverse(CoverageVector((0.25,))) == pytest.approx(0.25 / EPS)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            cv_inverse([])

    @given(st.lists(st.floats(0, 1), min_size=2, max_size=10))
    def test_matches_stdlib(self, values):
        assert cv_inverse(values) == pytest.approx(oracle_cv_inverse(values), rel=1e-9, abs=1e-9)

    def test_sample_std_uses_n_minus_one(self):
        assert sample_std([1.0, 3.0]) == pytest.approx(math.sqrt(2.0))


class TestCoverageTerm:
    def test_pred_equals_ref(self):
        docs = DocumentSet(((A, B), (B, C)))
        assert coverage_term([A, B], [A, B], docs) == (0.0, 0.0)

    def test_additive_case(self):
        r = coverage_score_reward(2.0, 1.0)
        assert r == pytest.approx(0.5, rel=1e-7)
        assert r * 10 / 20 == pytest.approx(0.25, rel=1e-7)

    def test_subtractive_case(self):
        assert coverage_score_reward(1.0, 2.0) == pytest.approx(-1.0, rel=1e-7)

    def test_empty_reference(self):
        with pytest.raises(ValueError, match="empty reference"):
            coverage_term([A], [], DocumentSet(((A,),)))

    def test_empty_prediction_has_zero_term(self):
        docs = DocumentSet(((A, B), (C,)))
        r = combined_reward([], [A], docs)
        assert r.r_cov_hat == 0.0 and r.combined == 0.0 and r.degenerate

    def test_hand_computed_record(self):
        # docs: (A B C) and (C); pred A B -> coverage (1, 0); ref C -> coverage (1, 1)
        docs = DocumentSet(((A, B, C), (C,)))
        cp = 0.5 / (math.sqrt(0.5) + EPS)
        cr = 1.0 / EPS
        r_cov, r_hat = coverage_term([A, B], [C], docs)
        assert r_cov == pytest.approx((cp - cr) / (cp + EPS), rel=1e-12)
        assert r_hat == pytest.approx(r_cov * 2, rel=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(token_lists, token_lists, doc_sets, st.integers(1, 4))
    def test_length_scaling(self, pred, ref, docs, k):
        # repeating the prediction k times keeps its coverage vector
        r1 = coverage_term(pred, ref, docs)
        rk = coverage_term(pred * k, ref, docs)
        if coverage_vector(pred * k, docs).values == coverage_vector(pred, docs).values:
            assert rk[1] == pytest.approx(k * r1[1], rel=1e-12)


class TestCombinedReward:
    def test_default_beta(self):
        assert RewardConfig().beta == 1.0

    def test_perfect_prediction(self):
        docs = DocumentSet(((A, B), (B, C)))
        assert combined_reward([A, B, C], [A, B, C], docs).combined == 1.0

    def test_linear_combination(self):
        docs = DocumentSet(((A, B, C), (C,)))
        r = combined_reward([A, B], [C, A], docs)
        assert r.combined == pytest.approx(r.rouge_l_f1 + r.r_cov_hat, abs=1e-12)

    def test_negative_beta_rejected(self):
        with pytest.raises(ValueError):
            RewardConfig(beta=-0.1)

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.integers(5, 9), max_size=8), token_lists, doc_sets)
    def test_matches_oracle(self, pred, ref, docs):
        want = oracle_reward(pred, ref, docs)
        got = combined_reward(pred, ref, docs).combined
        assert got == pytest.approx(want, rel=1e-9, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(token_lists, token_lists, doc_sets, st.floats(0, 5), st.floats(0, 5))
    def test_linear_in_beta(self, pred, ref, docs, b1, b2):
        f = lambda b: combined_reward(pred, ref, docs, RewardConfig(beta=b)).combined
        f0, f1 = f(0.0), f(1.0)
        for b in (b1, b2):
            assert f(b) == pytest.approx(f0 + b * (f1 - f0), rel=1e-9, abs=1e-6)
