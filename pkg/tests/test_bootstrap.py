import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relaxsum.bootstrap import bootstrap_test, permutation_test

scores = st.lists(st.floats(-10, 10), min_size=2, max_size=30)


def test_identical_scores():
    a = [0.3, 0.5, 0.1, 0.9]
    assert bootstrap_test(a, a) == 1.0


def test_dominance():
    b = np.random.default_rng(0).random(50)
    assert bootstrap_test(b + 10, b, resamples=10_000) < 0.001


def test_length_mismatch():
    with pytest.raises(ValueError):
        bootstrap_test([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        bootstrap_test([1], [1])


def test_deterministic_given_seed():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=40), rng.normal(size=40)
    assert bootstrap_test(a, b, 2000, rng=7) == bootstrap_test(a, b, 2000, rng=7)


def test_sign_symmetric():
    rng = np.random.default_rng(2)
    a, b = rng.normal(0.2, 1, 40), rng.normal(0, 1, 40)
    assert bootstrap_test(a, b, 3000, rng=3) == bootstrap_test(b, a, 3000, rng=3)


@settings(max_examples=50, deadline=None)
@given(scores, st.integers(0, 2 ** 32 - 1))
def test_p_in_unit_interval(a, seed):
    b = list(reversed(a))
    for test in (bootstrap_test, permutation_test):
        assert 0.0 <= test(a, b, 200, rng=seed) <= 1.0


def test_agrees_with_permutation_test():
    rng = np.random.default_rng(7)
    n, effect, experiments = 100, 0.2, 1000
    boot = perm = 0
    for e in range(experiments):
        a, b = rng.normal(effect, 1, n), rng.normal(0, 1, n)
        boot += bootstrap_test(a, b, 2000, rng=e) < 0.05
        perm += permutation_test(a, b, 2000, rng=10 ** 6 + e) < 0.05
    assert abs(boot - perm) / experiments <= 0.02
