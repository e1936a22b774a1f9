"""Pure-Python implementations of the compiled kernels (same signatures)."""

import numpy as np


def lcs_length(a, b) -> int:
    a = list(a)
    b = list(b)
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            if x == y:
                cur.append(prev[j] + 1)
            else:
                cur.append(prev[j + 1] if prev[j + 1] >= cur[j] else cur[j])
        prev = cur
    return prev[-1]


def merge_pair(seq, left: int, right: int, new: int) -> np.ndarray:
    seq = np.asarray(seq, dtype=np.int32).tolist()
    out = []
    i, n = 0, len(seq)
    while i < n:
        if i + 1 < n and seq[i] == left and seq[i + 1] == right:
            out.append(new)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return np.asarray(out, dtype=np.int32)
