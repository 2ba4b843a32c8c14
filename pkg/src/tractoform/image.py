"""Discretize embedding coordinates onto a 2D grid and aggregate per-fiber
features into multi-channel images.

Binning is half-open with the top edge closed: pixel = floor((c-min)/(max-min)*R),
the range maximum landing in the last pixel. Out-of-range coordinates are
clamped, never dropped, so every fiber appears in exactly one pixel and stays
reachable for back-projection. Unmapped pixels hold 0 for every statistic
(documented asymmetry for min; use stat="count" as a presence mask).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingCoords, EmbeddingSpace, embed
from .fibers import FiberBundle, split_by_hemisphere
from .metrics import mpfd

TFIM_MAGIC = b"TFIM"
TFIM_VERSION = 1
TFPM_MAGIC = b"TFPM"
TFPM_VERSION = 1

CHANNEL_NAMES = ("left", "right", "commissural")
AGGREGATION_STATS = ("mean", "max", "min", "count")
_STAT_CODES = {name: i for i, name in enumerate(AGGREGATION_STATS)}

DEFAULT_AUGMENT_FRACTION = 0.8
DEFAULT_AUGMENT_COUNT = 100


@dataclass(frozen=True)
class TractoImage:
    """Multi-channel R x R feature image plus the fiber -> pixel map that
    produced it."""

    resolution: int
    channels: tuple  # channel names, ("left","right","commissural") or ("all",)
    pixels: np.ndarray  # (C, R, R) float64
    feature: str  # "mean_fa" | "mean_md" | "" for count
    stat: str
    fiber_pixel_map: tuple  # per channel: dict fiber id -> (row, col)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def channel(self, name: str) -> np.ndarray:
        return self.pixels[self.channels.index(name)]

    def inverse_map(self, channel_index: int) -> dict:
        """pixel (row, col) -> sorted list of fiber ids mapped there."""
        inv = {}
        for fid, px in self.fiber_pixel_map[channel_index].items():
            inv.setdefault(px, []).append(fid)
        return {px: sorted(fids) for px, fids in inv.items()}


def discretize(coords: EmbeddingCoords, ranges: np.ndarray, resolution: int) -> np.ndarray:
    """Map the first two embedding dimensions to integer (row, col) pixels.

    ranges: (2, 2) array of [min, max] for dims 1 and 2. Coordinates are
    clamped into range first; the maximum maps into the last pixel.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    ranges = np.asarray(ranges, dtype=np.float64)
    if ranges.shape != (2, 2):
        raise ValueError("need [min, max] ranges for exactly 2 dims")
    lo, hi = ranges[:, 0], ranges[:, 1]
    if np.any(hi <= lo):
        raise ValueError("degenerate embedding space (range min >= max)")
    if coords.values.shape[1] < 2:
        raise ValueError("need at least 2 embedding dimensions")
    c = np.clip(coords.values[:, :2], lo, hi)
    px = np.floor((c - lo) / (hi - lo) * resolution).astype(np.int64)
    return np.minimum(px, resolution - 1)


def _aggregate(pixels_flat, values, resolution, stat):
    """Scatter values onto the flat grid with the given statistic.

    bincount accumulates in input order, so pixel sums are reproducible for a
    fixed fiber order.
    """
    size = resolution * resolution
    counts = np.bincount(pixels_flat, minlength=size).astype(np.float64)
    occupied = counts > 0
    if stat == "count":
        return counts.reshape(resolution, resolution)
    out = np.zeros(size)
    if stat == "mean":
        sums = np.bincount(pixels_flat, weights=values, minlength=size)
        out[occupied] = sums[occupied] / counts[occupied]
    elif stat == "max":
        acc = np.full(size, -np.inf)
        np.maximum.at(acc, pixels_flat, values)
        out[occupied] = acc[occupied]
    elif stat == "min":
        acc = np.full(size, np.inf)
        np.minimum.at(acc, pixels_flat, values)
        out[occupied] = acc[occupied]
    else:
        raise ValueError(f"unknown aggregation stat {stat!r}")
    return out.reshape(resolution, resolution)


def rasterize(
    bundle: FiberBundle,
    coords: EmbeddingCoords,
    ranges: np.ndarray,
    resolution: int,
    feature: str = "mean_fa",
    stat: str = "mean",
    channel: str = "all",
) -> TractoImage:
    """Rasterize one bundle into a single-channel image."""
    if stat not in AGGREGATION_STATS:
        raise ValueError(f"unknown aggregation stat {stat!r}")
    if len(bundle) != len(coords) or not np.array_equal(bundle.ids, coords.ids):
        raise ValueError("coords must align with the bundle's fibers")
    if len(bundle) == 0:
        return TractoImage(
            resolution, (channel,), np.zeros((1, resolution, resolution)), feature if stat != "count" else "", stat, ({},)
        )
    px = discretize(coords, ranges, resolution)
    flat = px[:, 0] * resolution + px[:, 1]
    if stat == "count":
        values = np.ones(len(bundle))
        feat_name = ""
    else:
        values = bundle.features.get(feature)
        feat_name = feature
    grid = _aggregate(flat, values, resolution, stat)
    fmap = {int(fid): (int(r), int(c)) for fid, (r, c) in zip(bundle.ids, px)}
    return TractoImage(resolution, (channel,), grid[None, :, :], feat_name, stat, (fmap,))


def make_image(
    bundle: FiberBundle,
    space: EmbeddingSpace,
    resolution: int,
    feature: str = "mean_fa",
    stat: str = "mean",
) -> TractoImage:
    """Split by hemisphere, embed each part, and rasterize into the 3-channel
    image. All channels share the space's coordinate ranges."""
    parts = split_by_hemisphere(bundle)
    ranges = space.coord_ranges[:2]
    grids = []
    maps = []
    for part in parts:
        img = rasterize(part, embed(space, part), ranges, resolution, feature, stat)
        grids.append(img.pixels[0])
        maps.append(img.fiber_pixel_map[0])
    feat_name = "" if stat == "count" else feature
    return TractoImage(resolution, CHANNEL_NAMES, np.stack(grids), feat_name, stat, tuple(maps))


def augment(
    bundle: FiberBundle,
    space: EmbeddingSpace,
    resolution: int,
    feature: str = "mean_fa",
    stat: str = "mean",
    fraction: float = DEFAULT_AUGMENT_FRACTION,
    count: int = DEFAULT_AUGMENT_COUNT,
    seed: int = 0,
):
    """Images from `count` independent random fiber subsets (without
    replacement, floor(fraction*N) fibers each).

    Each image draws from its own seed-derived substream, so results do not
    depend on generation order.
    """
    if not (0 < fraction <= 1):
        raise ValueError("fraction must be in (0, 1]")
    if count < 1:
        raise ValueError("count must be >= 1")
    n = len(bundle)
    m = int(np.floor(fraction * n))
    if m == 0:
        raise ValueError("sample size is 0; increase fraction")
    children = np.random.SeedSequence(seed).spawn(count)
    ids = bundle.ids
    images = []
    for child in children:
        rng = np.random.default_rng(child)
        chosen = np.sort(rng.choice(ids, size=m, replace=False))
        images.append(make_image(bundle.subset(chosen), space, resolution, feature, stat))
    return images


@dataclass(frozen=True)
class PixelMpfd:
    channel: str
    row: int
    col: int
    n_fibers: int
    mpfd_mm: float


@dataclass(frozen=True)
class MpfdReport:
    per_pixel: tuple  # PixelMpfd for every pixel holding >= 2 fibers
    mean_mm: float | None  # mean over those pixels, None when there are none


def voxel_mpfd_report(image: TractoImage, bundle: FiberBundle) -> MpfdReport:
    """Mean pairwise fiber distance within each multi-fiber pixel.

    Diagnostic of embedding spatial coherence: low values mean fibers sharing
    a pixel are geometrically similar.
    """
    by_id = {s.id: s for s in bundle.streamlines}
    rows = []
    for c, channel in enumerate(image.channels):
        for (r, col), fids in sorted(image.inverse_map(c).items()):
            if len(fids) < 2:
                continue
            value = mpfd([by_id[f] for f in fids])
            rows.append(PixelMpfd(channel, r, col, len(fids), value))
    mean = float(np.mean([p.mpfd_mm for p in rows])) if rows else None
    return MpfdReport(tuple(rows), mean)


# ---------------------------------------------------------------------------
# TFIM image file (binary, little-endian)
#
# magic "TFIM" | u32 version | u32 C | u32 R | 16-byte feature name
# | u8 stat code | C*R*R float32 row-major
#
# TFPM companion pixel map: magic "TFPM" | u32 version | u32 C
# | per channel: u32 pair count | (u32 fiber id, u32 row, u32 col) triples


def save_image(path, image: TractoImage) -> None:
    with open(path, "wb") as f:
        f.write(TFIM_MAGIC)
        f.write(struct.pack("<III", TFIM_VERSION, image.n_channels, image.resolution))
        f.write(image.feature.encode("ascii").ljust(16))
        f.write(struct.pack("<B", _STAT_CODES[image.stat]))
        f.write(np.ascontiguousarray(image.pixels).astype("<f4").tobytes())


def save_pixel_map(path, image: TractoImage) -> None:
    with open(path, "wb") as f:
        f.write(TFPM_MAGIC)
        f.write(struct.pack("<II", TFPM_VERSION, image.n_channels))
        for fmap in image.fiber_pixel_map:
            f.write(struct.pack("<I", len(fmap)))
            for fid in sorted(fmap):
                r, c = fmap[fid]
                f.write(struct.pack("<III", fid, r, c))


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated {what} file")
    return buf


def load_image(path, pixel_map_path=None) -> TractoImage:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "TFIM") != TFIM_MAGIC:
            raise ValueError(f"{path}: not a TFIM file (bad magic)")
        version, c, r = struct.unpack("<III", _read_exact(f, 12, "TFIM"))
        if version != TFIM_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        feature = _read_exact(f, 16, "TFIM").decode("ascii").rstrip()
        (stat_code,) = struct.unpack("<B", _read_exact(f, 1, "TFIM"))
        if stat_code >= len(AGGREGATION_STATS):
            raise ValueError(f"{path}: unknown stat code {stat_code}")
        pixels = np.frombuffer(_read_exact(f, c * r * r * 4, "TFIM"), dtype="<f4")
    maps = tuple({} for _ in range(c))
    if pixel_map_path is not None:
        maps = load_pixel_map(pixel_map_path, expect_channels=c)
    channels = CHANNEL_NAMES if c == 3 else tuple(f"ch{i}" for i in range(c))
    if c == 1:
        channels = ("all",)
    return TractoImage(
        resolution=r,
        channels=channels,
        pixels=pixels.reshape(c, r, r).astype(np.float64),
        feature=feature,
        stat=AGGREGATION_STATS[stat_code],
        fiber_pixel_map=maps,
    )


def load_pixel_map(path, expect_channels=None) -> tuple:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "TFPM") != TFPM_MAGIC:
            raise ValueError(f"{path}: not a TFPM file (bad magic)")
        version, c = struct.unpack("<II", _read_exact(f, 8, "TFPM"))
        if version != TFPM_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        if expect_channels is not None and c != expect_channels:
            raise ValueError(f"{path}: channel count {c} != image channels {expect_channels}")
        maps = []
        for _ in range(c):
            (count,) = struct.unpack("<I", _read_exact(f, 4, "TFPM"))
            raw = np.frombuffer(_read_exact(f, count * 12, "TFPM"), dtype="<u4").reshape(count, 3)
            maps.append({int(fid): (int(r), int(col)) for fid, r, col in raw})
    return tuple(maps)


def save_pgm(path, channel_pixels: np.ndarray) -> None:
    """8-bit binary PGM of one channel, min-max scaled for visualization."""
    arr = np.asarray(channel_pixels, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    scaled = np.zeros_like(arr) if hi == lo else (arr - lo) / (hi - lo)
    img = np.round(scaled * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())
