import itertools

import numpy as np
import pytest

from relaxsum import kernels


@pytest.fixture(params=kernels.available_backends())
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    monkeypatch.setattr(kernels, "BACKEND", request.param)
    return request.param


def brute_lcs(a, b):
    """Length of the longest subsequence of ``a`` that is also a subsequence of ``b``."""
    def is_sub(s, t):
        it = iter(t)
        return all(x in it for x in s)

    for k in range(min(len(a), len(b)), 0, -1):
        if any(is_sub(c, b) for c in itertools.combinations(a, k)):
            return k
    return 0


def brute_fragments(summary, document, min_len=1):
    """Greedy longest match by trying every (length, start) pair, longest first."""
    s, d = list(summary), list(document)
    out, i = [], 0
    while i < len(s):
        found = None
        for length in range(len(s) - i, min_len - 1, -1):
            for j in range(len(d) - length + 1):
                if d[j:j + length] == s[i:i + length]:
                    found = (i, j, length)
                    break
            if found:
                break
        if found:
            out.append(found)
            i += found[2]
        else:
            i += 1
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture
def report():
    """Record one acceptance line, then assert it."""
    def _report(criterion, ok, detail):
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line
    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
