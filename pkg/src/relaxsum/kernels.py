"""Backend selection for the LCS and fragment-matching kernels.

The compiled extension is used when it was built; setting the environment
variable ``RELAXSUM_PURE_PYTHON=1`` forces the pure-Python implementation.
"""
import os

import numpy as np

from relaxsum import _purepy

try:
    if os.environ.get("RELAXSUM_PURE_PYTHON"):
        raise ImportError("pure Python requested")
    from relaxsum import _speedups
except ImportError:
    _speedups = None

BACKEND = "cython" if _speedups is not None else "python"


def _as_i64(seq):
    return np.ascontiguousarray(seq, dtype=np.int64)


def lcs_length(a, b, backend=None):
    if (backend or BACKEND) == "cython":
        if _speedups is None:
            raise RuntimeError("compiled kernels are not available")
        return int(_speedups.lcs_length(_as_i64(a), _as_i64(b)))
    return _purepy.lcs_length(list(a), list(b))


def greedy_fragments(summary, document, min_len=1, backend=None):
    if (backend or BACKEND) == "cython":
        if _speedups is None:
            raise RuntimeError("compiled kernels are not available")
        return _speedups.greedy_fragments(_as_i64(summary), _as_i64(document), min_len)
    return _purepy.greedy_fragments(list(summary), list(document), min_len)


def available_backends():
    return ["python"] + (["cython"] if _speedups is not None else [])
