"""Pure-numpy fallback for the pairwise mean-closest-point kernels.

Vectorized per output row to bound memory at m*P*P*3 floats per row.
"""

import numpy as np


def _row(pa_i, pb):
    # pa_i (P,3), pb (m,P,3) -> (m,) symmetrized MCP distances
    diff = pa_i[None, :, None, :] - pb[:, None, :, :]  # (m, Pa, Pb, 3)
    dist = np.sqrt(np.einsum("mabk,mabk->mab", diff, diff))
    d_ab = dist.min(axis=2).mean(axis=1)
    d_ba = dist.min(axis=1).mean(axis=1)
    return 0.5 * (d_ab + d_ba)


def mcp_matrix_rect(pa, pb):
    """Pairwise MCP distances, pa (n,P,3) x pb (m,P,3) -> (n,m)."""
    n = pa.shape[0]
    out = np.empty((n, pb.shape[0]))
    for i in range(n):
        out[i] = _row(pa[i], pb)
    return out


def mcp_matrix_sym(pts):
    """Pairwise MCP distances within one set, (n,P,3) -> symmetric (n,n)."""
    n = pts.shape[0]
    out = np.zeros((n, n))
    for i in range(n - 1):
        row = _row(pts[i], pts[i + 1 :])
        out[i, i + 1 :] = row
        out[i + 1 :, i] = row
    return out


def warmup():
    """No-op; matches the numba module's interface."""
