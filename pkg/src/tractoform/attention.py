"""Turn per-layer transformer attention tensors into pixel-level score maps
and discriminative fiber sets.

Rollout convention: per layer, average the heads, add the identity for the
residual path, row-normalize, then multiply the layers together (last layer
leftmost) and read the classification-token row restricted to patch tokens.
Pixels scoring above mean + 2 population standard deviations are selected and
back-projected to fibers through the image's fiber -> pixel map.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

TFAT_MAGIC = b"TFAT"
TFAT_VERSION = 1

ROW_SUM_TOL = 1e-3


@dataclass(frozen=True)
class AttentionStack:
    """L layers x H heads of N x N row-stochastic token attention.

    Token 0 is the classification token; tokens 1..N-1 are patches in
    row-major patch order on a G x G grid rendered at resolution R.
    """

    weights: np.ndarray  # (L, H, N, N) float64
    grid: int  # G
    resolution: int  # R

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ValueError("attention weights must have shape (L, H, N, N)")
        if self.grid * self.grid + 1 != w.shape[2]:
            raise ValueError(f"token count {w.shape[2]} != G^2+1 for G={self.grid}")
        if self.resolution % self.grid != 0:
            raise ValueError(f"resolution {self.resolution} not divisible by grid {self.grid}")
        object.__setattr__(self, "weights", w)

    @property
    def n_layers(self) -> int:
        return self.weights.shape[0]

    @property
    def n_heads(self) -> int:
        return self.weights.shape[1]

    @property
    def n_tokens(self) -> int:
        return self.weights.shape[2]


@dataclass(frozen=True)
class DiscriminativeSet:
    """Pixels above the attention threshold and the fibers mapped to them."""

    threshold: float
    pixels: tuple  # ((row, col), ...) in scan order
    fiber_ids: tuple  # ascending fiber ids


def rollout_joint(weights: np.ndarray, first_to_last: bool = True) -> np.ndarray:
    """Joint token-attention matrix from raw (L, H, N, N) weights.

    Head-averages each layer, adds the identity, row-normalizes, and forms
    the layer product (default: first-to-last, i.e. J = A_L ... A_2 A_1).
    Rows of the result sum to 1.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ValueError("attention weights must have shape (L, H, N, N)")
    n = w.shape[2]
    row_sums = w.sum(axis=3)
    if np.max(np.abs(row_sums - 1.0)) > ROW_SUM_TOL:
        raise ValueError("malformed attention: rows do not sum to 1")
    joint = np.eye(n)
    for layer in range(w.shape[0]):
        a = w[layer].mean(axis=0) + np.eye(n)
        a /= a.sum(axis=1, keepdims=True)
        if first_to_last:
            joint = a @ joint
        else:
            joint = joint @ a
    return joint


def cls_patch_scores(joint: np.ndarray) -> np.ndarray:
    """Classification-token row of the joint matrix, patch tokens only."""
    return joint[0, 1:]


def rollout(stack: AttentionStack, first_to_last: bool = True) -> np.ndarray:
    """Patch-level attention scores (G x G) for the classification token."""
    joint = rollout_joint(stack.weights, first_to_last)
    return cls_patch_scores(joint).reshape(stack.grid, stack.grid)


def upsample(patch_scores: np.ndarray, resolution: int) -> np.ndarray:
    """Nearest-neighbor block expansion of G x G patch scores to R x R.

    Block expansion (not bilinear) so thresholding and back-projection see
    exactly the per-patch scores, with no invented values at boundaries.
    """
    scores = np.asarray(patch_scores, dtype=np.float64)
    g = scores.shape[0]
    if scores.shape != (g, g):
        raise ValueError("patch scores must be square")
    if resolution % g != 0:
        raise ValueError(f"resolution {resolution} not divisible by grid {g}")
    block = resolution // g
    return np.kron(scores, np.ones((block, block)))


def threshold(score_map: np.ndarray):
    """Selection threshold T = mean + 2 population stds, and the pixels
    scoring strictly above it (constant maps select nothing)."""
    m = np.asarray(score_map, dtype=np.float64)
    if m.size == 0:
        raise ValueError("empty attention map")
    t = float(m.mean() + 2.0 * m.std())
    rows, cols = np.nonzero(m > t)
    return t, tuple((int(r), int(c)) for r, c in zip(rows, cols))


def backproject(pixels, fiber_pixel_map: dict, resolution: int, threshold_value: float = float("nan")) -> DiscriminativeSet:
    """Fibers whose pixel lies in the selected set, in ascending id order."""
    for r, c in pixels:
        if not (0 <= r < resolution and 0 <= c < resolution):
            raise ValueError(f"pixel ({r}, {c}) out of range for resolution {resolution}")
    selected = set(pixels)
    fids = sorted(fid for fid, px in fiber_pixel_map.items() if px in selected)
    return DiscriminativeSet(threshold_value, tuple(sorted(selected)), tuple(fids))


def groupwise_map(maps) -> np.ndarray:
    """Elementwise mean of attention maps (fixed index-order reduction)."""
    maps = list(maps)
    if not maps:
        raise ValueError("no attention maps to average")
    shape = np.asarray(maps[0]).shape
    for m in maps[1:]:
        if np.asarray(m).shape != shape:
            raise ValueError("attention maps differ in shape")
    acc = np.zeros(shape, dtype=np.float64)
    for m in maps:
        acc += np.asarray(m, dtype=np.float64)
    return acc / len(maps)


# ---------------------------------------------------------------------------
# TFAT attention file (binary, little-endian)
#
# magic "TFAT" | u32 version | u32 L | u32 H | u32 N | u32 G | u32 R
# | L*H*N*N float32


def save_attention(path, stack: AttentionStack) -> None:
    l, h, n = stack.n_layers, stack.n_heads, stack.n_tokens
    with open(path, "wb") as f:
        f.write(TFAT_MAGIC)
        f.write(struct.pack("<IIIIII", TFAT_VERSION, l, h, n, stack.grid, stack.resolution))
        f.write(np.ascontiguousarray(stack.weights).astype("<f4").tobytes())


def load_attention(path) -> AttentionStack:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != TFAT_MAGIC:
            raise ValueError(f"{path}: not a TFAT file (bad magic)")
        header = f.read(24)
        if len(header) != 24:
            raise ValueError(f"{path}: truncated TFAT header")
        version, l, h, n, g, r = struct.unpack("<IIIIII", header)
        if version != TFAT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        raw = f.read(l * h * n * n * 4)
        if len(raw) != l * h * n * n * 4:
            raise ValueError(f"{path}: truncated TFAT payload")
    weights = np.frombuffer(raw, dtype="<f4").reshape(l, h, n, n).astype(np.float64)
    return AttentionStack(weights, g, r)
