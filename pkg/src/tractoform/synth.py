"""Desk-scale synthetic cohorts with known group differences, and the
representation-level Welch t-map check.

A cohort copies one base geometry into every subject and perturbs only the
per-fiber mean FA: white Gaussian noise with standard deviation
mean(base FA) / SNR (SNR read as mean signal over noise std), plus a fixed
fractional FA decrease on the ground-truth tract in group G2. FA is clamped
to [0, 1] after noising.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fibers import FiberBundle, load_bundle, make_bundle, save_bundle

DEFAULT_SNR = 1.0
DEFAULT_DECREASE_FRACTION = 0.20
DEFAULT_FIBERS_PER_BUNDLE = 200
DEFAULT_SUBJECTS_PER_GROUP = 40

T_SENTINEL = 1e9

MANIFEST_NAME = "cohort.json"


@dataclass(frozen=True)
class BundleGeometry:
    """Centerline descriptor: a straight segment or a circular arc from start
    to end (arc bulges out to the given radius, radius >= half the chord)."""

    name: str
    kind: str  # "line" | "arc"
    start: tuple
    end: tuple
    radius: float | None = None
    fa_range: tuple = (0.4, 0.6)
    md_range: tuple = (0.6e-3, 0.9e-3)

    def centerline(self, n_points: int) -> np.ndarray:
        s = np.asarray(self.start, dtype=np.float64)
        e = np.asarray(self.end, dtype=np.float64)
        if s.shape != (3,) or e.shape != (3,):
            raise ValueError(f"bundle {self.name}: start/end must be 3D points")
        chord = np.linalg.norm(e - s)
        if chord == 0:
            raise ValueError(f"bundle {self.name}: start equals end")
        t = np.linspace(0.0, 1.0, n_points)
        if self.kind == "line":
            return s[None, :] + t[:, None] * (e - s)[None, :]
        if self.kind != "arc":
            raise ValueError(f"bundle {self.name}: unknown kind {self.kind!r}")
        if self.radius is None or self.radius < chord / 2:
            raise ValueError(f"bundle {self.name}: arc radius must be >= half the chord")
        u = (e - s) / chord
        ref = np.array([0.0, 0.0, 1.0])
        if abs(u @ ref) > 0.99:
            ref = np.array([0.0, 1.0, 0.0])
        w = np.cross(u, ref)
        w /= np.linalg.norm(w)
        center = (s + e) / 2 + w * np.sqrt(self.radius**2 - (chord / 2) ** 2)
        v_s = s - center
        v_e = e - center
        e1 = v_s / self.radius
        e2 = v_e - (v_e @ e1) * e1
        e2 /= np.linalg.norm(e2)
        theta = np.arccos(np.clip(v_s @ v_e / self.radius**2, -1.0, 1.0))
        ang = t * theta
        pts = center[None, :] + self.radius * (
            np.cos(ang)[:, None] * e1[None, :] + np.sin(ang)[:, None] * e2[None, :]
        )
        return pts


def make_bundles(
    geometries,
    fibers_per_bundle: int = DEFAULT_FIBERS_PER_BUNDLE,
    jitter_mm: float = 1.0,
    seed: int = 0,
    n_points: int = 15,
):
    """Generate the base geometry: each bundle replicates its centerline with
    Gaussian point jitter, and draws baseline FA/MD uniformly from the
    bundle's bands. Returns (bundle, {name: fiber id array})."""
    geometries = list(geometries)
    if len(geometries) < 2:
        raise ValueError("need at least 2 bundles")
    if jitter_mm < 0:
        raise ValueError("jitter must be >= 0")
    children = np.random.SeedSequence(seed).spawn(len(geometries))
    points, fa, md = [], [], []
    id_sets = {}
    next_id = 0
    for geom, child in zip(geometries, children):
        rng = np.random.default_rng(child)
        center = geom.centerline(n_points)
        offsets = rng.normal(0.0, jitter_mm, size=(fibers_per_bundle, n_points, 3))
        points.extend(center[None, :, :] + offsets)
        fa.append(rng.uniform(*geom.fa_range, size=fibers_per_bundle))
        md.append(rng.uniform(*geom.md_range, size=fibers_per_bundle))
        id_sets[geom.name] = np.arange(next_id, next_id + fibers_per_bundle, dtype=np.int64)
        next_id += fibers_per_bundle
    bundle = make_bundle(
        points,
        mean_fa=np.concatenate(fa),
        mean_md=np.concatenate(md),
        provenance=f"synthetic seed={seed}",
    )
    return bundle, id_sets


@dataclass(frozen=True)
class SyntheticCohort:
    """Two groups of subjects sharing one fiber topology, with the modified
    tract recorded as ground truth."""

    subjects: tuple  # (subject id, group "G1"|"G2", FiberBundle)
    tract_ids: np.ndarray
    seed: int
    snr: float
    decrease_fraction: float

    def group(self, label: str):
        return [(sid, b) for sid, g, b in self.subjects if g == label]


def make_groups(
    base: FiberBundle,
    tract_ids,
    snr: float = DEFAULT_SNR,
    decrease_fraction: float = DEFAULT_DECREASE_FRACTION,
    n_per_group: int = DEFAULT_SUBJECTS_PER_GROUP,
    seed: int = 0,
) -> SyntheticCohort:
    """Noise the base FA into two groups, decreasing the tract fibers' FA by
    the given fraction in G2 only."""
    if snr <= 0:
        raise ValueError("snr must be > 0")
    if not (0 <= decrease_fraction < 1):
        raise ValueError("decrease_fraction must be in [0, 1)")
    tract_ids = np.asarray(list(tract_ids), dtype=np.int64)
    if decrease_fraction > 0 and tract_ids.size == 0:
        raise ValueError("empty tract_ids with a nonzero decrease")
    base_ids = base.ids
    if tract_ids.size and not np.isin(tract_ids, base_ids).all():
        raise ValueError("tract_ids not all present in base bundle")
    fa_base = base.features.mean_fa
    sigma_noise = float(fa_base.mean()) / snr
    tract_mask = np.isin(base_ids, tract_ids)

    children = np.random.SeedSequence(seed).spawn(2 * n_per_group)
    subjects = []
    for gi, group in enumerate(("G1", "G2")):
        for i in range(n_per_group):
            rng = np.random.default_rng(children[gi * n_per_group + i])
            fa = fa_base.copy()
            if group == "G2":
                fa[tract_mask] *= 1.0 - decrease_fraction
            fa = np.clip(fa + rng.normal(0.0, sigma_noise, fa.shape), 0.0, 1.0)
            subjects.append((f"{group}_{i:03d}", group, base.with_features(mean_fa=fa)))
    return SyntheticCohort(tuple(subjects), tract_ids, seed, snr, decrease_fraction)


@dataclass(frozen=True)
class DiffMap:
    """Per-pixel Welch t-statistics between two groups of images."""

    t: np.ndarray  # (C, R, R) float64; 0 where undefined
    defined: np.ndarray  # bool, pixels with >= 2 present subjects per group
    n_g1: np.ndarray  # per-pixel present-subject counts
    n_g2: np.ndarray


def _stack_group(images):
    values = np.stack([img.pixels for img in images])
    present = np.zeros_like(values, dtype=bool)
    for s, img in enumerate(images):
        for c, fmap in enumerate(img.fiber_pixel_map):
            for r, col in fmap.values():
                present[s, c, r, col] = True
    return values, present


def group_difference_map(images_g1, images_g2) -> DiffMap:
    """Welch two-sample t per pixel over subjects.

    A pixel with no mapped fiber in a subject is missing for that subject;
    pixels with fewer than 2 present subjects in either group get t = 0.
    Zero-variance pixels with differing means map to +-T_SENTINEL.
    """
    images_g1, images_g2 = list(images_g1), list(images_g2)
    if len(images_g1) < 2 or len(images_g2) < 2:
        raise ValueError("need at least 2 images per group")
    shape = images_g1[0].pixels.shape
    for img in images_g1 + images_g2:
        if img.pixels.shape != shape:
            raise ValueError("image shape mismatch across subjects")

    t = np.zeros(shape)
    v1, p1 = _stack_group(images_g1)
    v2, p2 = _stack_group(images_g2)
    n1 = p1.sum(axis=0)
    n2 = p2.sum(axis=0)
    defined = (n1 >= 2) & (n2 >= 2)

    def masked_stats(v, p, n):
        s = np.where(p, v, 0.0).sum(axis=0)
        mean = np.divide(s, n, out=np.zeros(shape), where=n > 0)
        dev = np.where(p, v - mean[None], 0.0)
        var = np.divide((dev * dev).sum(axis=0), n - 1, out=np.zeros(shape), where=n > 1)
        return mean, var

    mean1, var1 = masked_stats(v1, p1, n1)
    mean2, var2 = masked_stats(v2, p2, n2)
    se2 = np.divide(var1, n1, out=np.zeros(shape), where=n1 > 0) + np.divide(
        var2, n2, out=np.zeros(shape), where=n2 > 0
    )
    diff = mean1 - mean2
    ok = defined & (se2 > 0)
    t[ok] = diff[ok] / np.sqrt(se2[ok])
    degenerate = defined & (se2 == 0) & (diff != 0)
    t[degenerate] = np.sign(diff[degenerate]) * T_SENTINEL
    return DiffMap(t, defined, n1, n2)


# ---------------------------------------------------------------------------
# Cohort directory layout: one TFBD per subject plus a cohort.json manifest.


def save_cohort(directory, cohort: SyntheticCohort) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    subjects = []
    groups = {"G1": [], "G2": []}
    for sid, group, bundle in cohort.subjects:
        fname = f"{sid}.tfbd"
        save_bundle(directory / fname, bundle)
        subjects.append({"id": sid, "group": group, "file": fname})
        groups[group].append(sid)
    manifest = {
        "format": "tractoform-cohort",
        "version": 1,
        "seeds": {"root": cohort.seed},
        "snr": cohort.snr,
        "decrease_fraction": cohort.decrease_fraction,
        "tract_ids": [int(i) for i in cohort.tract_ids],
        "groups": groups,
        "subjects": subjects,
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_cohort(directory) -> SyntheticCohort:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text())
    if manifest.get("format") != "tractoform-cohort" or manifest.get("version") != 1:
        raise ValueError(f"{directory}: not a tractoform cohort directory")
    subjects = tuple(
        (entry["id"], entry["group"], load_bundle(directory / entry["file"]))
        for entry in manifest["subjects"]
    )
    return SyntheticCohort(
        subjects,
        np.asarray(manifest["tract_ids"], dtype=np.int64),
        int(manifest["seeds"]["root"]),
        float(manifest["snr"]),
        float(manifest["decrease_fraction"]),
    )
