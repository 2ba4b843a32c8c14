"""Batch command-line entry point.

Subcommands: space, image, augment, synth, interpret, diffmap. Every run
echoes its effective parameters and input-file hashes to a run.json next to
the outputs; reruns with identical inputs and seeds reproduce byte-identical
files. Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import zlib
from pathlib import Path

import numpy as np

from . import attention as att
from . import backends, embedding, image as img, metrics, synth
from . import fibers

_USAGE_EXIT = 2
_RUNTIME_EXIT = 1


class UsageError(Exception):
    """Bad invocation or unreadable/malformed input; maps to exit code 2."""


def derive_seed(seed: int, label: str) -> int:
    """Named substream of the run seed (logged in run.json)."""
    ss = np.random.SeedSequence([seed, zlib.crc32(label.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require_file(path_str: str, what: str) -> Path:
    path = Path(path_str)
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _write_run_json(dest: Path, subcommand: str, params: dict, inputs: dict, substreams: dict | None = None):
    doc = {
        "subcommand": subcommand,
        "parameters": params,
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)} for name, p in inputs.items()},
        "backend": backends.get_backend(),
    }
    if substreams:
        doc["seed_substreams"] = substreams
    dest.write_text(json.dumps(doc, indent=2, sort_keys=True))


def _load_bundle_checked(path: Path) -> fibers.FiberBundle:
    try:
        return fibers.load_bundle(path)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load_space_checked(path: Path) -> embedding.EmbeddingSpace:
    try:
        return embedding.load_space(path)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _save_channel_pgms(stem: Path, image: img.TractoImage) -> None:
    for c, name in enumerate(image.channels):
        tail = f"_{name}.pgm" if image.n_channels > 1 else ".pgm"
        img.save_pgm(stem.parent / (stem.stem + tail), image.pixels[c])


# ---------------------------------------------------------------------------
# subcommands


def cmd_space(args) -> int:
    bundle_path = _require_file(args.bundle, "bundle")
    bundle = _load_bundle_checked(bundle_path)
    sample_seed = derive_seed(args.seed, "landmarks")
    n = len(bundle)
    if n == 0:
        raise UsageError("bundle is empty")
    count = min(args.landmarks, n)
    rng = np.random.default_rng(sample_seed)
    chosen = np.sort(rng.choice(bundle.ids, size=count, replace=False))
    landmarks = fibers.resample_bundle(bundle.subset(chosen), args.points)
    space = embedding.build_space(landmarks, sigma=args.sigma, k=args.k, coord_scaling=args.coord_scaling)
    out = Path(args.out)
    embedding.save_space(out, space)
    _write_run_json(
        out.with_suffix(out.suffix + ".run.json"),
        "space",
        {
            "sigma": args.sigma,
            "k": args.k,
            "landmarks": count,
            "points": args.points,
            "seed": args.seed,
            "coord_scaling": args.coord_scaling,
            "out": str(out),
        },
        {"bundle": bundle_path},
        {"landmarks": sample_seed},
    )
    return 0


def _make_image_from_args(args, bundle_path: Path, space_path: Path) -> img.TractoImage:
    bundle = fibers.resample_bundle(_load_bundle_checked(bundle_path), args.points)
    space = _load_space_checked(space_path)
    return img.make_image(bundle, space, args.resolution, args.feature, args.stat)


def cmd_image(args) -> int:
    bundle_path = _require_file(args.bundle, "bundle")
    space_path = _require_file(args.space, "space")
    image = _make_image_from_args(args, bundle_path, space_path)
    out = Path(args.out)
    img.save_image(out, image)
    img.save_pixel_map(out.with_suffix(".tfpm"), image)
    if args.pgm:
        _save_channel_pgms(out, image)
    _write_run_json(
        out.with_suffix(out.suffix + ".run.json"),
        "image",
        {
            "resolution": args.resolution,
            "feature": args.feature,
            "stat": args.stat,
            "points": args.points,
            "out": str(out),
        },
        {"bundle": bundle_path, "space": space_path},
    )
    return 0


def cmd_augment(args) -> int:
    bundle_path = _require_file(args.bundle, "bundle")
    space_path = _require_file(args.space, "space")
    bundle = fibers.resample_bundle(_load_bundle_checked(bundle_path), args.points)
    space = _load_space_checked(space_path)
    sample_seed = derive_seed(args.seed, "augment")
    images = img.augment(
        bundle,
        space,
        args.resolution,
        args.feature,
        args.stat,
        fraction=args.fraction,
        count=args.count,
        seed=sample_seed,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, image in enumerate(images):
        stem = out_dir / f"augment_{i:03d}.tfim"
        img.save_image(stem, image)
        img.save_pixel_map(stem.with_suffix(".tfpm"), image)
        if args.pgm:
            _save_channel_pgms(stem, image)
    _write_run_json(
        out_dir / "run.json",
        "augment",
        {
            "resolution": args.resolution,
            "feature": args.feature,
            "stat": args.stat,
            "points": args.points,
            "fraction": args.fraction,
            "count": args.count,
            "seed": args.seed,
            "out_dir": str(out_dir),
        },
        {"bundle": bundle_path, "space": space_path},
        {"augment": sample_seed},
    )
    return 0


def default_geometries():
    """Built-in desk-scale layout: two left bundles, two right, one commissural.

    The first bundle stands in for a deep projection tract and carries a high
    FA band; the others model superficial/association bundles with lower FA.
    """
    return [
        synth.BundleGeometry("left_a", "line", (-45.0, -60.0, -10.0), (-45.0, 60.0, -10.0), fa_range=(0.60, 0.75)),
        synth.BundleGeometry("left_b", "arc", (-60.0, -50.0, 40.0), (-60.0, 50.0, 40.0), radius=80.0, fa_range=(0.25, 0.40)),
        synth.BundleGeometry("right_a", "line", (45.0, -60.0, 10.0), (45.0, 60.0, 10.0), fa_range=(0.30, 0.45)),
        synth.BundleGeometry("right_b", "line", (60.0, 0.0, -50.0), (60.0, 0.0, 50.0), fa_range=(0.35, 0.50)),
        synth.BundleGeometry("commissural", "arc", (-50.0, 30.0, 30.0), (50.0, 30.0, 30.0), radius=70.0, fa_range=(0.25, 0.40)),
    ]


def cmd_synth(args) -> int:
    geoms = default_geometries()
    if not (2 <= args.bundles <= len(geoms)):
        raise UsageError(f"--bundles must be in 2..{len(geoms)}")
    geoms = geoms[: args.bundles]
    if not (0 <= args.tract_index < len(geoms)):
        raise UsageError("--tract-index out of range")
    geom_seed = derive_seed(args.seed, "geometry")
    group_seed = derive_seed(args.seed, "groups")
    base, id_sets = synth.make_bundles(
        geoms,
        fibers_per_bundle=args.fibers_per_bundle,
        jitter_mm=args.jitter,
        seed=geom_seed,
        n_points=args.points,
    )
    tract_ids = id_sets[geoms[args.tract_index].name]
    cohort = synth.make_groups(
        base,
        tract_ids,
        snr=args.snr,
        decrease_fraction=args.decrease,
        n_per_group=args.subjects_per_group,
        seed=group_seed,
    )
    out_dir = Path(args.out_dir)
    synth.save_cohort(out_dir, cohort)
    fibers.save_bundle(out_dir / "base.tfbd", base)
    _write_run_json(
        out_dir / "run.json",
        "synth",
        {
            "bundles": args.bundles,
            "fibers_per_bundle": args.fibers_per_bundle,
            "subjects_per_group": args.subjects_per_group,
            "snr": args.snr,
            "decrease": args.decrease,
            "tract_index": args.tract_index,
            "jitter": args.jitter,
            "points": args.points,
            "seed": args.seed,
            "out_dir": str(out_dir),
        },
        {},
        {"geometry": geom_seed, "groups": group_seed},
    )
    return 0


def cmd_interpret(args) -> int:
    att_paths = [_require_file(p, "attention file") for p in args.attention]
    image_path = _require_file(args.image, "image file")
    map_path = _require_file(args.map, "pixel map file")
    bundle_path = _require_file(args.bundle, "bundle")
    try:
        stacks = [att.load_attention(p) for p in att_paths]
        image = img.load_image(image_path, pixel_map_path=map_path)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _load_bundle_checked(bundle_path)  # existence + well-formedness of the source bundle

    if image.n_channels == 1:
        channel_index = 0
    else:
        if args.channel is None:
            raise UsageError("--channel is required for multi-channel images")
        channel_index = image.channels.index(args.channel)
    for stack in stacks:
        if stack.resolution != image.resolution:
            raise UsageError(
                f"attention resolution {stack.resolution} != image resolution {image.resolution}"
            )

    # several attention files average into a group-wise score map
    first_to_last = args.order == "first-to-last"
    maps = [
        att.upsample(att.rollout(stack, first_to_last=first_to_last), image.resolution)
        for stack in stacks
    ]
    score_map = att.groupwise_map(maps)
    t, pixels = att.threshold(score_map)
    result = att.backproject(pixels, image.fiber_pixel_map[channel_index], image.resolution, t)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    map_image = img.TractoImage(
        resolution=image.resolution,
        channels=("all",),
        pixels=score_map[None, :, :],
        feature="attention",
        stat="mean",
        fiber_pixel_map=({},),
    )
    img.save_image(out_dir / "attention_map.tfim", map_image)
    if args.pgm:
        img.save_pgm(out_dir / "attention_map.pgm", score_map)
    (out_dir / "discriminative.json").write_text(
        json.dumps(
            {
                "threshold": result.threshold,
                "channel": image.channels[channel_index],
                "pixels": [list(p) for p in result.pixels],
                "fiber_ids": list(result.fiber_ids),
            },
            indent=2,
            sort_keys=True,
        )
    )
    inputs = {"image": image_path, "map": map_path, "bundle": bundle_path}
    for i, p in enumerate(att_paths):
        inputs[f"attention:{i}"] = p
    _write_run_json(
        out_dir / "run.json",
        "interpret",
        {"channel": image.channels[channel_index], "order": args.order, "out_dir": str(out_dir)},
        inputs,
    )
    return 0


def cmd_diffmap(args) -> int:
    manifest_path = _require_file(args.manifest, "cohort manifest")
    images_dir = Path(args.images)
    if not images_dir.is_dir():
        raise UsageError(f"images directory not found: {images_dir}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "tractoform-cohort":
        raise UsageError(f"{manifest_path}: not a cohort manifest")

    groups = {"G1": [], "G2": []}
    inputs = {"manifest": manifest_path}
    for entry in manifest["subjects"]:
        stem = images_dir / entry["id"]
        tfim = stem.with_suffix(".tfim")
        tfpm = stem.with_suffix(".tfpm")
        if not tfim.is_file() or not tfpm.is_file():
            raise UsageError(f"missing image or pixel map for subject {entry['id']}")
        try:
            groups[entry["group"]].append(img.load_image(tfim, pixel_map_path=tfpm))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        inputs[f"image:{entry['id']}"] = tfim

    diff = synth.group_difference_map(groups["G1"], groups["G2"])
    out = Path(args.out)
    t_image = img.TractoImage(
        resolution=diff.t.shape[-1],
        channels=img.CHANNEL_NAMES if diff.t.shape[0] == 3 else tuple(f"ch{i}" for i in range(diff.t.shape[0])),
        pixels=diff.t,
        feature="welch_t",
        stat="mean",
        fiber_pixel_map=tuple({} for _ in range(diff.t.shape[0])),
    )
    img.save_image(out, t_image)
    if args.pgm:
        _save_channel_pgms(out, t_image)
    _write_run_json(
        out.with_suffix(out.suffix + ".run.json"),
        "diffmap",
        {"images": str(images_dir), "out": str(out)},
        inputs,
    )
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tractoform",
        description="Whole-brain tractography embedding images, synthetic cohorts, attention back-projection.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="cap kernel parallelism (default: TRACTOFORM_THREADS or all cores)")

    p = sub.add_parser("space", parents=[common], help="build and save a groupwise embedding space")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, default=metrics.DEFAULT_SIGMA_MM)
    p.add_argument("--k", type=int, default=embedding.DEFAULT_EIGENPAIRS)
    p.add_argument("--landmarks", type=int, default=embedding.DEFAULT_LANDMARKS)
    p.add_argument("--points", type=int, default=fibers.DEFAULT_RESAMPLE_POINTS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coord-scaling", choices=("rw", "lambda-rw"), default="rw")
    p.set_defaults(func=cmd_space)

    p = sub.add_parser("image", parents=[common], help="rasterize a bundle into a 3-channel image")
    p.add_argument("--bundle", required=True)
    p.add_argument("--space", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=160)
    p.add_argument("--feature", choices=("mean_fa", "mean_md"), default="mean_fa")
    p.add_argument("--stat", choices=img.AGGREGATION_STATS, default="mean")
    p.add_argument("--points", type=int, default=fibers.DEFAULT_RESAMPLE_POINTS)
    p.add_argument("--pgm", action="store_true", help="also export 8-bit PGM per channel")
    p.set_defaults(func=cmd_image)

    p = sub.add_parser("augment", parents=[common], help="images from random fiber subsets")
    p.add_argument("--bundle", required=True)
    p.add_argument("--space", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resolution", type=int, default=160)
    p.add_argument("--feature", choices=("mean_fa", "mean_md"), default="mean_fa")
    p.add_argument("--stat", choices=img.AGGREGATION_STATS, default="mean")
    p.add_argument("--points", type=int, default=fibers.DEFAULT_RESAMPLE_POINTS)
    p.add_argument("--fraction", type=float, default=img.DEFAULT_AUGMENT_FRACTION)
    p.add_argument("--count", type=int, default=img.DEFAULT_AUGMENT_COUNT)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pgm", action="store_true")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic two-group cohort")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bundles", type=int, default=5)
    p.add_argument("--fibers-per-bundle", type=int, default=synth.DEFAULT_FIBERS_PER_BUNDLE)
    p.add_argument("--subjects-per-group", type=int, default=synth.DEFAULT_SUBJECTS_PER_GROUP)
    p.add_argument("--snr", type=float, default=synth.DEFAULT_SNR)
    p.add_argument("--decrease", type=float, default=synth.DEFAULT_DECREASE_FRACTION)
    p.add_argument("--tract-index", type=int, default=0)
    p.add_argument("--jitter", type=float, default=1.0)
    p.add_argument("--points", type=int, default=fibers.DEFAULT_RESAMPLE_POINTS)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("interpret", parents=[common], help="attention rollout, thresholding, fiber back-projection")
    p.add_argument("--attention", required=True, nargs="+", help="one TFAT, or several to interpret their group-wise mean map")
    p.add_argument("--image", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--channel", choices=img.CHANNEL_NAMES, default=None)
    p.add_argument("--order", choices=("first-to-last", "last-to-first"), default="first-to-last")
    p.add_argument("--pgm", action="store_true")
    p.set_defaults(func=cmd_interpret)

    p = sub.add_parser("diffmap", parents=[common], help="Welch t-map between cohort groups")
    p.add_argument("--manifest", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", action="store_true")
    p.set_defaults(func=cmd_diffmap)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        backends.set_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _USAGE_EXIT
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
