"""Independent reference implementations used only by the tests."""

from collections import deque
from fractions import Fraction

import numpy as np


def flood_fill_components(mask, connectivity=8):
    """Components as frozensets of (v, u), found by breadth-first search."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    if connectivity == 8:
        steps = [(dv, du) for dv in (-1, 0, 1) for du in (-1, 0, 1) if (dv, du) != (0, 0)]
    else:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    seen = np.zeros_like(mask)
    comps = []
    for v in range(h):
        for u in range(w):
            if not mask[v, u] or seen[v, u]:
                continue
            seen[v, u] = True
            queue = deque([(v, u)])
            members = []
            while queue:
                cv, cu = queue.popleft()
                members.append((cv, cu))
                for dv, du in steps:
                    nv, nu = cv + dv, cu + du
                    if 0 <= nv < h and 0 <= nu < w and mask[nv, nu] and not seen[nv, nu]:
                        seen[nv, nu] = True
                        queue.append((nv, nu))
            comps.append(frozenset(members))
    return comps


def otsu_bruteforce(hist):
    """Lowest t maximising w0*w1*(mu0 - mu1)^2, exact rationals; None if all zero."""
    hist = [int(c) for c in hist]
    n = sum(hist)
    best, best_t = Fraction(0), None
    for t in range(len(hist)):
        lo = hist[: t + 1]
        n0 = sum(lo)
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            continue
        mu0 = Fraction(sum(i * c for i, c in enumerate(lo)), n0)
        mu1 = Fraction(sum(i * c for i, c in enumerate(hist) if i > t), n1)
        var = Fraction(n0, n) * Fraction(n1, n) * (mu0 - mu1) ** 2
        if var > best:
            best, best_t = var, t
    return best_t
