import math

import numpy as np
import pytest

from tractoform import Streamline, make_bundle, resample_bundle


def line_fiber(fid, start, end, n=15):
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    t = np.linspace(0.0, 1.0, n)
    return Streamline(fid, start[None, :] + t[:, None] * (end - start)[None, :])


def brute_mcp(a_points, b_points):
    """Independent MCP oracle: pure-python loops over point pairs."""

    def directed(pa, pb):
        total = 0.0
        for p in pa:
            total += min(math.dist(p, q) for q in pb)
        return total / len(pa)

    pa = [tuple(p) for p in np.asarray(a_points)]
    pb = [tuple(p) for p in np.asarray(b_points)]
    return 0.5 * (directed(pa, pb) + directed(pb, pa))


def brute_scatter(pixels, values, resolution, stat):
    """Independent rasterization oracle: per-pixel python lists, sequential
    left-to-right accumulation in fiber order."""
    buckets = {}
    for (r, c), v in zip(pixels, values):
        buckets.setdefault((int(r), int(c)), []).append(float(v))
    out = np.zeros((resolution, resolution))
    for (r, c), vals in buckets.items():
        if stat == "count":
            out[r, c] = len(vals)
        elif stat == "mean":
            acc = 0.0
            for v in vals:
                acc += v
            out[r, c] = acc / len(vals)
        elif stat == "max":
            out[r, c] = max(vals)
        elif stat == "min":
            out[r, c] = min(vals)
    return out


@pytest.fixture
def two_parallel_lines():
    a = Streamline(0, [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    b = Streamline(1, [[0.0, 3.0, 0.0], [1.0, 3.0, 0.0], [2.0, 3.0, 0.0]])
    return a, b


def random_wiggle_bundle(n_fibers, seed, spread=30.0, n_points=15):
    """Random smooth-ish polylines resampled to a common count."""
    rng = np.random.default_rng(seed)
    pts = [
        np.cumsum(rng.normal(0.0, 3.0, (8, 3)), axis=0) + rng.normal(0.0, spread, 3)
        for _ in range(n_fibers)
    ]
    return resample_bundle(make_bundle(pts), n_points)
