"""Groupwise spectral embedding space over landmark fibers and its
out-of-sample extension.

The space is the eigensystem of the normalized landmark affinity
A_hat[i,j] = a[i,j] / sqrt(s_i * s_j) with row sums s_i = sum_j a[i,j].
Its leading eigenpair is trivial (eigenvalue 1, eigenvector proportional
to sqrt(s)) and carries no geometry, so retained coordinate dimension j
comes from eigenpair j+1:

    landmark i:   e_i[j] = U[i, j+1] / sqrt(s_i)
    new fiber f:  b_i = exp(-mcp(f, L_i)^2 / sigma^2)
                  s_f = sum_i b_i
                  u_f[m] = (1/lambda_m) * sum_i b_i / sqrt(s_f s_i) * U[i, m]
                  e_f[j] = u_f[j+1] / sqrt(s_f)

which reproduces every landmark's own coordinates exactly. Eigenpairs with
|lambda| below a degeneracy floor contribute zero coordinates everywhere
(the extension would otherwise divide by zero on structureless directions).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import backends
from .fibers import FiberBundle, points_array
from .metrics import DEFAULT_SIGMA_MM

TFES_MAGIC = b"TFES"
TFES_VERSION = 1

DEFAULT_EIGENPAIRS = 10
DEFAULT_LANDMARKS = 1000
RANGE_MARGIN = 0.05  # coord_ranges widened by this fraction of the width per side
DEGENERATE_EIGVAL = 1e-12
_MIN_ROW_SUM = 1e-300


@dataclass(frozen=True)
class EmbeddingSpace:
    """Frozen groupwise latent space: landmarks plus the eigensystem of their
    normalized affinity."""

    landmark_points: np.ndarray  # (n, P, 3) float64, float32-exact values
    sigma: float
    eigenvalues: np.ndarray  # (k,) float64, descending, lambda_1 ~= 1
    eigenvectors: np.ndarray  # (n, k) float64, unit-norm sign-fixed columns
    row_sums: np.ndarray  # (n,) float64, positive
    coord_ranges: np.ndarray  # (k-1, 2) float64 [min, max] per retained dim

    @property
    def n_landmarks(self) -> int:
        return self.landmark_points.shape[0]

    @property
    def n_points(self) -> int:
        return self.landmark_points.shape[1]

    @property
    def k(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def n_dims(self) -> int:
        return self.k - 1

    def degenerate_dims(self) -> np.ndarray:
        """Boolean mask over retained dims whose eigenvalue is numerically zero."""
        return np.abs(self.eigenvalues[1:]) <= DEGENERATE_EIGVAL


@dataclass(frozen=True)
class EmbeddingCoords:
    """Per-fiber embedding coordinates (one column per retained dimension)."""

    ids: np.ndarray  # (N,) int64 fiber ids
    values: np.ndarray  # (N, k-1) float64

    def __len__(self) -> int:
        return self.ids.shape[0]


def _fix_signs(U: np.ndarray) -> np.ndarray:
    """Flip eigenvector columns so the largest-magnitude entry is positive."""
    U = U.copy()
    for j in range(U.shape[1]):
        i = int(np.argmax(np.abs(U[:, j])))
        if U[i, j] < 0:
            U[:, j] = -U[:, j]
    return U


def _expand_ranges(coords: np.ndarray) -> np.ndarray:
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    margin = RANGE_MARGIN * (hi - lo)
    return np.stack([lo - margin, hi + margin], axis=1)


def _landmark_coords(eigenvalues, eigenvectors, row_sums) -> np.ndarray:
    inv_sqrt_s = 1.0 / np.sqrt(row_sums)
    coords = eigenvectors[:, 1:] * inv_sqrt_s[:, None]
    coords[:, np.abs(eigenvalues[1:]) <= DEGENERATE_EIGVAL] = 0.0
    return coords


def landmark_coords(space: EmbeddingSpace) -> EmbeddingCoords:
    """Coordinates of the landmarks themselves (ids 0..n-1 in landmark order)."""
    values = _landmark_coords(space.eigenvalues, space.eigenvectors, space.row_sums)
    return EmbeddingCoords(np.arange(space.n_landmarks, dtype=np.int64), values)


def build_space(
    landmarks: FiberBundle,
    sigma: float = DEFAULT_SIGMA_MM,
    k: int = DEFAULT_EIGENPAIRS,
    coord_scaling: str = "rw",
) -> EmbeddingSpace:
    """Build the frozen embedding space from resampled landmark fibers.

    Keeps the top-k eigenpairs of the normalized affinity, sorted by
    descending eigenvalue, with deterministic column signs.

    coord_scaling: "rw" leaves coordinates as U/sqrt(s) (random-walk
    eigenvectors); "lambda-rw" weights each dimension by its eigenvalue.
    The weighting is folded into the stored basis columns so the space file
    format and the extension formula are identical under both choices.
    """
    if coord_scaling not in ("rw", "lambda-rw"):
        raise ValueError(f"unknown coord_scaling {coord_scaling!r}")
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if k < 3:
        raise ValueError("need k >= 3 retained eigenpairs")
    n = len(landmarks)
    if n < k:
        raise ValueError(f"need at least k = {k} landmarks, got {n}")
    # store landmark geometry at float32 precision so the TFES round trip is
    # lossless and a reloaded space embeds bitwise-identically
    pts = points_array(landmarks).astype(np.float32).astype(np.float64)

    d = backends.kernels().mcp_matrix_sym(pts)
    a = np.exp(-(d * d) / (sigma * sigma))
    s = a.sum(axis=1)
    if s.min() < _MIN_ROW_SUM:
        bad = int(landmarks.ids[int(np.argmin(s))])
        raise ValueError(f"isolated fiber {bad}: affinity row sum underflowed")

    inv_sqrt_s = 1.0 / np.sqrt(s)
    a_hat = a * np.outer(inv_sqrt_s, inv_sqrt_s)
    try:
        w, v = np.linalg.eigh(a_hat)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(w)[::-1][:k]
    eigenvalues = w[order]
    eigenvectors = _fix_signs(v[:, order])
    if abs(eigenvalues[0] - 1.0) > 1e-6:
        raise ValueError(
            f"leading eigenvalue {eigenvalues[0]!r} deviates from 1; eigensolver failure"
        )
    if coord_scaling == "lambda-rw":
        eigenvectors = eigenvectors * eigenvalues[None, :]
    coords = _landmark_coords(eigenvalues, eigenvectors, s)
    return EmbeddingSpace(
        landmark_points=pts,
        sigma=float(sigma),
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        row_sums=s,
        coord_ranges=_expand_ranges(coords),
    )


def embed(space: EmbeddingSpace, bundle: FiberBundle) -> EmbeddingCoords:
    """Embed a bundle's fibers into the space (Nystrom extension).

    Embarrassingly parallel over fibers; the space is read-only.
    """
    if len(bundle) == 0:
        return EmbeddingCoords(np.empty(0, dtype=np.int64), np.empty((0, space.n_dims)))
    # geometry enters the kernels at float32 precision, matching the stored
    # landmarks; keeps the landmark-reproduction identity exact and loaded
    # spaces bitwise-equivalent to freshly built ones
    pts = points_array(bundle).astype(np.float32).astype(np.float64)
    if pts.shape[1] != space.n_points:
        raise ValueError(
            f"bundle resampled to {pts.shape[1]} points but space expects {space.n_points}"
        )
    d = backends.kernels().mcp_matrix_rect(pts, space.landmark_points)
    b = np.exp(-(d * d) / (space.sigma * space.sigma))
    s_f = b.sum(axis=1)
    if s_f.min() < _MIN_ROW_SUM:
        bad = int(bundle.ids[int(np.argmin(s_f))])
        raise ValueError(f"unembeddable fiber {bad}: no affinity to any landmark")

    b_hat = b * np.outer(1.0 / np.sqrt(s_f), 1.0 / np.sqrt(space.row_sums))
    u = b_hat @ space.eigenvectors[:, 1:]
    lam = space.eigenvalues[1:]
    keep = ~space.degenerate_dims()
    coords = np.zeros_like(u)
    coords[:, keep] = u[:, keep] / lam[keep][None, :] / np.sqrt(s_f)[:, None]
    return EmbeddingCoords(bundle.ids, coords)


def full_embedding_oracle(bundle: FiberBundle, sigma: float = DEFAULT_SIGMA_MM, k: int = DEFAULT_EIGENPAIRS) -> EmbeddingCoords:
    """Exact dense spectral embedding with every fiber as a landmark.

    Reference path for tests: plain numpy throughout, independent of the
    pairwise kernels and of build_space/embed.
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if k < 3:
        raise ValueError("need k >= 3 retained eigenpairs")
    n = len(bundle)
    if n < k:
        raise ValueError(f"need at least k = {k} fibers, got {n}")
    pts = points_array(bundle).astype(np.float32).astype(np.float64)

    a = np.empty((n, n))
    for i in range(n):
        diff = pts[i][None, :, None, :] - pts[:, None, :, :]
        dist = np.sqrt((diff * diff).sum(axis=3))
        d_ab = dist.min(axis=2).mean(axis=1)
        d_ba = dist.min(axis=1).mean(axis=1)
        a[i] = np.exp(-(0.5 * (d_ab + d_ba)) ** 2 / (sigma * sigma))
    s = a.sum(axis=1)
    if s.min() < _MIN_ROW_SUM:
        raise ValueError("isolated fiber: affinity row sum underflowed")
    inv_sqrt_s = 1.0 / np.sqrt(s)
    w, v = np.linalg.eigh(a * np.outer(inv_sqrt_s, inv_sqrt_s))
    order = np.argsort(w)[::-1][:k]
    coords = _landmark_coords(w[order], _fix_signs(v[:, order]), s)
    return EmbeddingCoords(bundle.ids, coords)


# ---------------------------------------------------------------------------
# TFES space file format (binary, little-endian)
#
# magic "TFES" | u32 version | u32 n | u32 point count | u32 k | f64 sigma
# | n*P*3 float32 landmarks | k f64 eigenvalues | n*k f64 eigenvectors
# | n f64 row sums | (k-1)*2 f64 coord ranges


def save_space(path, space: EmbeddingSpace) -> None:
    n, p, k = space.n_landmarks, space.n_points, space.k
    with open(path, "wb") as f:
        f.write(TFES_MAGIC)
        f.write(struct.pack("<IIIId", TFES_VERSION, n, p, k, space.sigma))
        f.write(space.landmark_points.astype("<f4").tobytes())
        f.write(space.eigenvalues.astype("<f8").tobytes())
        f.write(np.ascontiguousarray(space.eigenvectors).astype("<f8").tobytes())
        f.write(space.row_sums.astype("<f8").tobytes())
        f.write(np.ascontiguousarray(space.coord_ranges).astype("<f8").tobytes())


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError("truncated TFES file")
    return buf


def load_space(path) -> EmbeddingSpace:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != TFES_MAGIC:
            raise ValueError(f"{path}: not a TFES file (bad magic)")
        version, n, p, k = struct.unpack("<IIII", _read_exact(f, 16))
        if version != TFES_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        (sigma,) = struct.unpack("<d", _read_exact(f, 8))
        pts = np.frombuffer(_read_exact(f, n * p * 12), dtype="<f4")
        eigenvalues = np.frombuffer(_read_exact(f, k * 8), dtype="<f8")
        eigenvectors = np.frombuffer(_read_exact(f, n * k * 8), dtype="<f8")
        row_sums = np.frombuffer(_read_exact(f, n * 8), dtype="<f8")
        ranges = np.frombuffer(_read_exact(f, (k - 1) * 2 * 8), dtype="<f8")
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes")
    return EmbeddingSpace(
        landmark_points=pts.reshape(n, p, 3).astype(np.float64),
        sigma=sigma,
        eigenvalues=eigenvalues.astype(np.float64),
        eigenvectors=eigenvectors.reshape(n, k).astype(np.float64),
        row_sums=row_sums.astype(np.float64),
        coord_ranges=ranges.reshape(k - 1, 2).astype(np.float64),
    )
