"""Numba-jitted pairwise mean-closest-point kernels.

Each output entry is computed independently with a fixed inner summation
order, so parallel and serial runs produce bitwise-identical matrices.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _mcp_pair(pa, pb):
    # pa, pb: (P, 3) contiguous float64
    p = pa.shape[0]
    s_ab = 0.0
    for i in range(p):
        ax, ay, az = pa[i, 0], pa[i, 1], pa[i, 2]
        best = np.inf
        for j in range(p):
            dx = ax - pb[j, 0]
            dy = ay - pb[j, 1]
            dz = az - pb[j, 2]
            dd = dx * dx + dy * dy + dz * dz
            if dd < best:
                best = dd
        s_ab += np.sqrt(best)
    s_ba = 0.0
    for j in range(p):
        bx, by, bz = pb[j, 0], pb[j, 1], pb[j, 2]
        best = np.inf
        for i in range(p):
            dx = bx - pa[i, 0]
            dy = by - pa[i, 1]
            dz = bz - pa[i, 2]
            dd = dx * dx + dy * dy + dz * dz
            if dd < best:
                best = dd
        s_ba += np.sqrt(best)
    return 0.5 * (s_ab / p + s_ba / p)


@njit(parallel=True, cache=True)
def mcp_matrix_rect(pa, pb):
    """Pairwise MCP distances, pa (n,P,3) x pb (m,P,3) -> (n,m)."""
    n = pa.shape[0]
    m = pb.shape[0]
    out = np.empty((n, m))
    for i in prange(n):
        for j in range(m):
            out[i, j] = _mcp_pair(pa[i], pb[j])
    return out


@njit(parallel=True, cache=True)
def mcp_matrix_sym(pts):
    """Pairwise MCP distances within one set, (n,P,3) -> symmetric (n,n)."""
    n = pts.shape[0]
    out = np.zeros((n, n))
    for i in prange(n):
        for j in range(i + 1, n):
            d = _mcp_pair(pts[i], pts[j])
            out[i, j] = d
            out[j, i] = d
    return out


def warmup():
    """Trigger JIT compilation on a tiny input (cached across processes)."""
    tiny = np.zeros((2, 2, 3))
    mcp_matrix_rect(tiny, tiny)
    mcp_matrix_sym(tiny)
