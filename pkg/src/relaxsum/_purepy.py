"""Pure-Python versions of the compiled kernels in ``_speedups.pyx``."""


def lcs_length(a, b):
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            if x == y:
                cur.append(prev[j] + 1)
            else:
                cur.append(max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def greedy_fragments(summary, document, min_len=1):
    n, m = len(summary), len(document)
    out = []
    i = 0
    while i < n:
        best_len, best_start = 0, -1
        for j in range(m):
            k = 0
            while i + k < n and j + k < m and summary[i + k] == document[j + k]:
                k += 1
            if k > best_len:
                best_len, best_start = k, j
        if best_len >= min_len and best_len > 0:
            out.append((i, best_start, best_len))
            i += best_len
        else:
            i += 1
    return out
