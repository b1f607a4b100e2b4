"""Independent brute-force semi-global path recursion used as a test oracle."""
import functools

import numpy as np


def reference_path_cost(c, direction, p1, p2):
    """L_r(p, d) by direct memoised recursion over the predecessor p - r."""
    h, w, nd = c.shape
    dx, dy = direction

    @functools.lru_cache(maxsize=None)
    def L(y, x):
        py, px = y - dy, x - dx
        cur = [float(c[y, x, k]) for k in range(nd)]
        if not (0 <= py < h and 0 <= px < w):
            return tuple(cur)
        prev = L(py, px)
        m = min(prev)
        out = []
        for k in range(nd):
            cands = [prev[k], m + p2]
            if k > 0:
                cands.append(prev[k - 1] + p1)
            if k < nd - 1:
                cands.append(prev[k + 1] + p1)
            out.append(cur[k] + min(cands) - m)
        return tuple(out)

    return np.array([[L(y, x) for x in range(w)] for y in range(h)])


def reference_aggregate(c, directions, p1, p2):
    total = np.zeros(c.shape)
    for r in directions:
        total = total + reference_path_cost(c, r, p1, p2)
    return total
