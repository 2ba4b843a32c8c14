"""Fiber-pair distance and affinity kernels, pairwise matrices, MPFD diagnostic.

The fiber similarity basis is the symmetrized mean closest point distance
d(a,b) = (d(a->b) + d(b->a)) / 2 with d(a->b) the mean over points of a of the
distance to the nearest point of b. Affinities are Gaussian, exp(-d^2/sigma^2).
All distances are computed in double precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import backends
from .fibers import FiberBundle, Streamline, points_array

DEFAULT_SIGMA_MM = 60.0


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray  # (n, m) float64, mm

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite distances")
        if v.min(initial=0.0) < 0.0:
            raise ValueError("negative distances")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class AffinityMatrix:
    values: np.ndarray  # (n, m) float64 in [0, 1]
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))


def _paired_points(a: Streamline, b: Streamline):
    if a.n_points != b.n_points:
        raise ValueError(
            f"mismatched point counts ({a.n_points} vs {b.n_points}); resample first"
        )
    return (
        np.ascontiguousarray(a.points)[None, :, :],
        np.ascontiguousarray(b.points)[None, :, :],
    )


def mcp_distance(a: Streamline, b: Streamline) -> float:
    """Symmetrized mean closest point distance between two resampled fibers, mm."""
    pa, pb = _paired_points(a, b)
    return float(backends.kernels().mcp_matrix_rect(pa, pb)[0, 0])


def affinity(d: float, sigma: float) -> float:
    """Gaussian fiber affinity exp(-d^2 / sigma^2)."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    return float(np.exp(-(d * d) / (sigma * sigma)))


def distance_matrix(set_a: FiberBundle, set_b: FiberBundle | None = None) -> DistanceMatrix:
    """Pairwise MCP distances between two bundles ((n,m), symmetric when set_b
    is omitted or identical to set_a)."""
    if len(set_a) == 0 or (set_b is not None and len(set_b) == 0):
        raise ValueError("empty input set")
    pa = points_array(set_a)
    k = backends.kernels()
    if set_b is None or set_b is set_a:
        return DistanceMatrix(k.mcp_matrix_sym(pa))
    pb = points_array(set_b)
    if pa.shape[1] != pb.shape[1]:
        raise ValueError("mismatched point counts between sets; resample first")
    return DistanceMatrix(k.mcp_matrix_rect(pa, pb))


def pairwise(set_a: FiberBundle, set_b: FiberBundle | None = None, sigma: float = DEFAULT_SIGMA_MM) -> AffinityMatrix:
    """Pairwise Gaussian affinities; square/symmetric with unit diagonal when
    set_b is omitted, rectangular otherwise."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    d = distance_matrix(set_a, set_b).values
    return AffinityMatrix(np.exp(-(d * d) / (sigma * sigma)), sigma)


def mpfd(fibers) -> float:
    """Mean pairwise fiber distance over all unordered pairs, mm."""
    fibers = list(fibers)
    if len(fibers) < 2:
        raise ValueError("mean pairwise fiber distance undefined for singleton")
    counts = {f.n_points for f in fibers}
    if len(counts) > 1:
        raise ValueError("mismatched point counts; resample first")
    pts = np.ascontiguousarray(np.stack([f.points for f in fibers]))
    d = backends.kernels().mcp_matrix_sym(pts)
    iu = np.triu_indices(len(fibers), k=1)
    return float(d[iu].mean())


def save_matrix(path, values: np.ndarray, sigma: float | None = None) -> None:
    """Export a matrix as raw float64 row-major plus a JSON sidecar
    {rows, cols, sigma}."""
    path = Path(path)
    v = np.ascontiguousarray(values, dtype="<f8")
    path.write_bytes(v.tobytes())
    sidecar = {"rows": int(v.shape[0]), "cols": int(v.shape[1]), "sigma": sigma}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar))


def load_matrix(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    v = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(meta["rows"], meta["cols"])
    return v.astype(np.float64), meta
