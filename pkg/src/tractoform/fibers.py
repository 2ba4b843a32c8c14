"""Streamline and bundle data model, resampling, hemisphere labeling, bundle file IO.

Coordinates are RAS millimeters with the midsagittal plane at x = 0; inputs are
assumed co-registered. All types are immutable after construction and safe to
share read-only across threads.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

TFBD_MAGIC = b"TFBD"
TFBD_VERSION = 1

DEFAULT_RESAMPLE_POINTS = 15
DEFAULT_HEMISPHERE_TAU_MM = 2.0

_FEATURE_NAMES = ("mean_fa", "mean_md")


class Hemisphere(Enum):
    LEFT = "left"
    RIGHT = "right"
    COMMISSURAL = "commissural"


def _frozen_array(a, dtype=np.float64):
    out = np.ascontiguousarray(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Streamline:
    """One fiber: an ordered 3D polyline with a stable non-negative id."""

    id: int
    points: np.ndarray  # (P, 3) float64, read-only

    def __post_init__(self):
        pts = _frozen_array(self.points)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"fiber {self.id}: points must have shape (P, 3)")
        if pts.shape[0] < 2:
            raise ValueError(f"fiber {self.id}: needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise ValueError(f"fiber {self.id}: non-finite coordinates")
        if self.id < 0:
            raise ValueError("fiber id must be non-negative")
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class FiberFeatures:
    """Per-fiber scalar features, aligned with the owning bundle's fiber order."""

    mean_fa: np.ndarray  # (N,) float64, each value in [0, 1]
    mean_md: np.ndarray  # (N,) float64, non-negative, mm^2/s

    def __post_init__(self):
        fa = _frozen_array(self.mean_fa)
        md = _frozen_array(self.mean_md)
        if fa.ndim != 1 or md.ndim != 1 or fa.shape != md.shape:
            raise ValueError("feature arrays must be 1-D and equal length")
        if not (np.all(np.isfinite(fa)) and np.all(np.isfinite(md))):
            raise ValueError("non-finite feature values")
        if fa.size and (fa.min() < 0.0 or fa.max() > 1.0):
            raise ValueError("mean_fa out of [0, 1]")
        if md.size and md.min() < 0.0:
            raise ValueError("mean_md must be non-negative")
        object.__setattr__(self, "mean_fa", fa)
        object.__setattr__(self, "mean_md", md)

    def __len__(self) -> int:
        return self.mean_fa.shape[0]

    def get(self, name: str) -> np.ndarray:
        if name not in _FEATURE_NAMES:
            raise ValueError(f"unknown feature name: {name!r}")
        return getattr(self, name)

    def take(self, index) -> "FiberFeatures":
        return FiberFeatures(self.mean_fa[index], self.mean_md[index])


@dataclass(frozen=True)
class FiberBundle:
    """A set of streamlines with per-fiber features.

    Fiber ids of a freshly built or loaded bundle are dense 0..N-1; bundles
    produced by subsetting (hemisphere splits, downsampling) keep the original
    ids so fibers stay traceable through pixel maps and back-projection.
    """

    streamlines: tuple
    features: FiberFeatures
    provenance: str = ""

    def __post_init__(self):
        sl = tuple(self.streamlines)
        ids = [s.id for s in sl]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate fiber ids in bundle")
        if len(self.features) != len(sl):
            raise ValueError("features must cover exactly the bundle's fibers")
        object.__setattr__(self, "streamlines", sl)

    def __len__(self) -> int:
        return len(self.streamlines)

    @property
    def ids(self) -> np.ndarray:
        return np.array([s.id for s in self.streamlines], dtype=np.int64)

    def subset(self, ids) -> "FiberBundle":
        """Sub-bundle containing the given fiber ids (original ids kept)."""
        wanted = set(int(i) for i in ids)
        index = [t for t, s in enumerate(self.streamlines) if s.id in wanted]
        missing = wanted - {self.streamlines[t].id for t in index}
        if missing:
            raise ValueError(f"ids not in bundle: {sorted(missing)}")
        return FiberBundle(
            tuple(self.streamlines[t] for t in index),
            self.features.take(np.array(index, dtype=np.intp))
            if index
            else FiberFeatures(np.empty(0), np.empty(0)),
            self.provenance,
        )

    def with_features(self, mean_fa=None, mean_md=None) -> "FiberBundle":
        fa = self.features.mean_fa if mean_fa is None else mean_fa
        md = self.features.mean_md if mean_md is None else mean_md
        return FiberBundle(self.streamlines, FiberFeatures(fa, md), self.provenance)


def make_bundle(points_list, mean_fa=None, mean_md=None, provenance="") -> FiberBundle:
    """Build a bundle with dense ids 0..N-1 from a list of (P,3) point arrays."""
    n = len(points_list)
    fa = np.zeros(n) if mean_fa is None else np.asarray(mean_fa, dtype=np.float64)
    md = np.zeros(n) if mean_md is None else np.asarray(mean_md, dtype=np.float64)
    streamlines = tuple(Streamline(i, pts) for i, pts in enumerate(points_list))
    return FiberBundle(streamlines, FiberFeatures(fa, md), provenance)


def resample(streamline: Streamline, n: int) -> Streamline:
    """Resample a streamline to n points equally spaced by arc length.

    Endpoints are preserved exactly. A degenerate polyline with zero total
    length (all points identical) is rejected.
    """
    if n < 2:
        raise ValueError("resample needs n >= 2")
    pts = streamline.points
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    total = cum[-1]
    if total == 0.0:
        raise ValueError(f"zero-length fiber (id {streamline.id})")
    t = np.linspace(0.0, total, n)
    out = np.empty((n, 3))
    for d in range(3):
        out[:, d] = np.interp(t, cum, pts[:, d])
    # np.interp clamps at the ends; pin endpoints exactly anyway
    out[0] = pts[0]
    out[-1] = pts[-1]
    return Streamline(streamline.id, out)


def resample_bundle(bundle: FiberBundle, n: int = DEFAULT_RESAMPLE_POINTS) -> FiberBundle:
    return FiberBundle(
        tuple(resample(s, n) for s in bundle.streamlines),
        bundle.features,
        bundle.provenance,
    )


def points_array(bundle: FiberBundle) -> np.ndarray:
    """Stack bundle points into a (N, P, 3) float64 array; requires a uniform
    point count (resample first)."""
    counts = {s.n_points for s in bundle.streamlines}
    if len(counts) > 1:
        raise ValueError(f"bundle has mixed point counts {sorted(counts)}; resample first")
    if not bundle.streamlines:
        return np.empty((0, 0, 3))
    return np.ascontiguousarray(np.stack([s.points for s in bundle.streamlines]))


def classify_hemisphere(streamline: Streamline, tau: float = DEFAULT_HEMISPHERE_TAU_MM) -> Hemisphere:
    """Label a fiber Left/Right/Commissural from its x extent.

    A fiber staying at x <= tau is Left, at x >= -tau Right; anything
    extending beyond the tolerance on both sides is Commissural, as is a
    fiber entirely within |x| <= tau (tie broken conservatively).
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    x = streamline.points[:, 0]
    stays_left = x.max() <= tau
    stays_right = x.min() >= -tau
    if stays_left and stays_right:
        return Hemisphere.COMMISSURAL
    if stays_left:
        return Hemisphere.LEFT
    if stays_right:
        return Hemisphere.RIGHT
    return Hemisphere.COMMISSURAL


def split_by_hemisphere(bundle: FiberBundle, tau: float = DEFAULT_HEMISPHERE_TAU_MM):
    """Partition a bundle into (left, right, commissural) sub-bundles.

    The partition is exhaustive and feature-preserving; fiber ids are kept.
    """
    buckets = {h: [] for h in Hemisphere}
    for t, s in enumerate(bundle.streamlines):
        buckets[classify_hemisphere(s, tau)].append(t)

    def pick(idx):
        if not idx:
            return FiberBundle((), FiberFeatures(np.empty(0), np.empty(0)), bundle.provenance)
        ix = np.array(idx, dtype=np.intp)
        return FiberBundle(
            tuple(bundle.streamlines[t] for t in idx),
            bundle.features.take(ix),
            bundle.provenance,
        )

    return (
        pick(buckets[Hemisphere.LEFT]),
        pick(buckets[Hemisphere.RIGHT]),
        pick(buckets[Hemisphere.COMMISSURAL]),
    )


# ---------------------------------------------------------------------------
# TFBD bundle file format (binary, little-endian)
#
# magic "TFBD" | u32 version | u32 N
# per fiber: u32 P | P*3 float32 xyz
# u8 feature count | per feature: 16-byte space-padded ASCII name | N float32


def save_bundle(path, bundle: FiberBundle) -> None:
    ids = bundle.ids
    if len(bundle) and not np.array_equal(ids, np.arange(len(bundle))):
        raise ValueError("TFBD stores full bundles with dense ids 0..N-1")
    with open(path, "wb") as f:
        f.write(TFBD_MAGIC)
        f.write(struct.pack("<II", TFBD_VERSION, len(bundle)))
        for s in bundle.streamlines:
            f.write(struct.pack("<I", s.n_points))
            f.write(s.points.astype("<f4").tobytes())
        f.write(struct.pack("<B", len(_FEATURE_NAMES)))
        for name in _FEATURE_NAMES:
            f.write(name.encode("ascii").ljust(16))
            f.write(bundle.features.get(name).astype("<f4").tobytes())


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError("truncated TFBD file")
    return buf


def load_bundle(path) -> FiberBundle:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != TFBD_MAGIC:
            raise ValueError(f"{path}: not a TFBD file (bad magic)")
        version, n = struct.unpack("<II", _read_exact(f, 8))
        if version != TFBD_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        pts_list = []
        for _ in range(n):
            (p,) = struct.unpack("<I", _read_exact(f, 4))
            raw = np.frombuffer(_read_exact(f, p * 12), dtype="<f4")
            pts_list.append(raw.reshape(p, 3).astype(np.float64))
        (n_feat,) = struct.unpack("<B", _read_exact(f, 1))
        feats = {}
        for _ in range(n_feat):
            name = _read_exact(f, 16).decode("ascii").rstrip()
            vals = np.frombuffer(_read_exact(f, n * 4), dtype="<f4").astype(np.float64)
            feats[name] = vals
        unknown = set(feats) - set(_FEATURE_NAMES)
        if unknown:
            raise ValueError(f"{path}: unknown features {sorted(unknown)}")
    return make_bundle(
        pts_list,
        mean_fa=feats.get("mean_fa"),
        mean_md=feats.get("mean_md"),
        provenance=str(path),
    )


def bundle_from_json(source) -> FiberBundle:
    """Import a bundle from the hand-written JSON fixture schema:
    {"fibers": [[[x,y,z],...],...], "mean_fa": [...], "mean_md": [...]}.
    """
    if isinstance(source, (str, bytes)):
        doc = json.loads(source)
    elif hasattr(source, "read"):
        doc = json.load(source)
    else:
        doc = source
    if "fibers" not in doc:
        raise ValueError("JSON bundle needs a 'fibers' key")
    pts_list = [np.asarray(fib, dtype=np.float64) for fib in doc["fibers"]]
    return make_bundle(
        pts_list,
        mean_fa=doc.get("mean_fa"),
        mean_md=doc.get("mean_md"),
        provenance="json",
    )
