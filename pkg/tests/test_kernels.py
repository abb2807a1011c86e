import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relaxsum import kernels

needs_ext = pytest.mark.skipif("cython" not in kernels.available_backends(), reason="extension not built")
seqs = st.lists(st.integers(0, 6), max_size=40)


def test_backend_is_known():
    assert kernels.BACKEND in ("cython", "python")
    assert "python" in kernels.available_backends()


@needs_ext
@settings(max_examples=300, deadline=None)
@given(seqs, seqs)
def test_lcs_backends_agree(a, b):
    assert kernels.lcs_length(a, b, backend="cython") == kernels.lcs_length(a, b, backend="python")


@needs_ext
@settings(max_examples=300, deadline=None)
@given(seqs, seqs, st.integers(1, 3))
def test_fragment_backends_agree(s, d, m):
    got = kernels.greedy_fragments(s, d, m, backend="cython")
    assert [tuple(f) for f in got] == [tuple(f) for f in kernels.greedy_fragments(s, d, m, backend="python")]


@needs_ext
def test_large_ids_and_numpy_input():
    a = np.array([10 ** 12, 5, 10 ** 12])
    assert kernels.lcs_length(a, [5, 10 ** 12], backend="cython") == 2


def test_missing_extension_is_reported(monkeypatch):
    monkeypatch.setattr(kernels, "_speedups", None)
    with pytest.raises(RuntimeError):
        kernels.lcs_length([1], [1], backend="cython")
