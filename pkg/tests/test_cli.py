import hashlib
import json

import numpy as np
import pytest

from tractoform import AttentionStack, load_image, make_bundle, save_attention, save_bundle
from tractoform.cli import main

from conftest import line_fiber


def file_hash(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def bundle_file(tmp_path):
    rng = np.random.default_rng(0)
    pts = []
    for x0 in (-30.0, -15.0, 20.0, 35.0):
        for i in range(10):
            j = rng.normal(0, 0.5, 3).astype(np.float32).astype(np.float64)
            pts.append(
                line_fiber(0, (x0 + j[0], -20 + j[1], j[2]), (x0 + j[0], 20 + j[1], j[2])).points
            )
    fa = rng.uniform(0.3, 0.7, len(pts)).astype(np.float32).astype(np.float64)
    md = rng.uniform(5e-4, 9e-4, len(pts)).astype(np.float32).astype(np.float64)
    bundle = make_bundle(pts, mean_fa=fa, mean_md=md)
    path = tmp_path / "bundle.tfbd"
    save_bundle(path, bundle)
    return path


def run(*args):
    return main([str(a) for a in args])


class TestSpaceCommand:
    def test_builds_and_writes_run_json(self, tmp_path, bundle_file):
        out = tmp_path / "space.tfes"
        code = run("space", "--bundle", bundle_file, "--out", out, "--sigma", 30, "--k", 5, "--landmarks", 20, "--seed", 7)
        assert code == 0
        assert out.is_file()
        run_doc = json.loads((tmp_path / "space.tfes.run.json").read_text())
        assert run_doc["subcommand"] == "space"
        assert run_doc["parameters"]["sigma"] == 30
        assert "bundle" in run_doc["inputs"]
        assert "landmarks" in run_doc["seed_substreams"]

    def test_missing_input_exit_2(self, tmp_path):
        assert run("space", "--bundle", tmp_path / "nope.tfbd", "--out", tmp_path / "s.tfes") == 2

    def test_rerun_identical_hash(self, tmp_path, bundle_file):
        out1 = tmp_path / "a.tfes"
        out2 = tmp_path / "b.tfes"
        for out in (out1, out2):
            assert run("space", "--bundle", bundle_file, "--out", out, "--sigma", 30, "--k", 5, "--landmarks", 20, "--seed", 7) == 0
        assert file_hash(out1) == file_hash(out2)


@pytest.fixture
def space_file(tmp_path, bundle_file):
    out = tmp_path / "space.tfes"
    assert run("space", "--bundle", bundle_file, "--out", out, "--sigma", 30, "--k", 5, "--landmarks", 40, "--seed", 1) == 0
    return out


class TestImageCommand:
    def test_writes_image_and_map(self, tmp_path, bundle_file, space_file):
        out = tmp_path / "img.tfim"
        code = run("image", "--bundle", bundle_file, "--space", space_file, "--out", out, "--resolution", 16)
        assert code == 0
        img = load_image(out, pixel_map_path=out.with_suffix(".tfpm"))
        assert img.resolution == 16
        assert img.n_channels == 3
        assert sum(len(m) for m in img.fiber_pixel_map) == 40

    def test_determinism(self, tmp_path, bundle_file, space_file):
        outs = [tmp_path / "i1.tfim", tmp_path / "i2.tfim"]
        for out in outs:
            assert run("image", "--bundle", bundle_file, "--space", space_file, "--out", out, "--resolution", 16) == 0
        assert file_hash(outs[0]) == file_hash(outs[1])
        assert file_hash(outs[0].with_suffix(".tfpm")) == file_hash(outs[1].with_suffix(".tfpm"))

    def test_bad_feature_usage_error(self, tmp_path, bundle_file, space_file, capsys):
        with pytest.raises(SystemExit) as exc:
            run("image", "--bundle", bundle_file, "--space", space_file, "--out", tmp_path / "x.tfim", "--feature", "volume")
        assert exc.value.code == 2

    def test_pgm_export(self, tmp_path, bundle_file, space_file):
        out = tmp_path / "img.tfim"
        assert run("image", "--bundle", bundle_file, "--space", space_file, "--out", out, "--resolution", 16, "--pgm") == 0
        for name in ("left", "right", "commissural"):
            assert (tmp_path / f"img_{name}.pgm").is_file()


class TestAugmentCommand:
    def test_count_files_written(self, tmp_path, bundle_file, space_file):
        out_dir = tmp_path / "aug"
        assert run("augment", "--bundle", bundle_file, "--space", space_file, "--out-dir", out_dir, "--resolution", 16, "--count", 3, "--fraction", 0.5, "--seed", 2) == 0
        assert sorted(p.name for p in out_dir.glob("*.tfim")) == [
            "augment_000.tfim",
            "augment_001.tfim",
            "augment_002.tfim",
        ]
        assert (out_dir / "run.json").is_file()

    def test_full_fraction_single_equals_image(self, tmp_path, bundle_file, space_file):
        img_out = tmp_path / "img.tfim"
        assert run("image", "--bundle", bundle_file, "--space", space_file, "--out", img_out, "--resolution", 16) == 0
        aug_dir = tmp_path / "aug1"
        assert run("augment", "--bundle", bundle_file, "--space", space_file, "--out-dir", aug_dir, "--resolution", 16, "--count", 1, "--fraction", 1.0, "--seed", 3) == 0
        assert file_hash(aug_dir / "augment_000.tfim") == file_hash(img_out)

    def test_seed_determinism(self, tmp_path, bundle_file, space_file):
        dirs = [tmp_path / "d1", tmp_path / "d2"]
        for d in dirs:
            assert run("augment", "--bundle", bundle_file, "--space", space_file, "--out-dir", d, "--resolution", 16, "--count", 2, "--fraction", 0.5, "--seed", 4) == 0
        for name in ("augment_000.tfim", "augment_001.tfim"):
            assert file_hash(dirs[0] / name) == file_hash(dirs[1] / name)


class TestSynthCommand:
    def test_cohort_written(self, tmp_path):
        out = tmp_path / "cohort"
        code = run("synth", "--out-dir", out, "--bundles", 3, "--fibers-per-bundle", 10, "--subjects-per-group", 2, "--seed", 5)
        assert code == 0
        manifest = json.loads((out / "cohort.json").read_text())
        assert len(manifest["subjects"]) == 4
        assert len(manifest["groups"]["G1"]) == 2
        assert manifest["tract_ids"] == list(range(10))
        assert (out / "base.tfbd").is_file()
        for entry in manifest["subjects"]:
            assert (out / entry["file"]).is_file()

    def test_determinism(self, tmp_path):
        outs = [tmp_path / "c1", tmp_path / "c2"]
        for out in outs:
            assert run("synth", "--out-dir", out, "--bundles", 2, "--fibers-per-bundle", 5, "--subjects-per-group", 2, "--seed", 6) == 0
        for name in ("cohort.json", "base.tfbd", "G1_000.tfbd", "G2_001.tfbd"):
            assert file_hash(outs[0] / name) == file_hash(outs[1] / name)


class TestInterpretCommand:
    def _write_identity_attention(self, path, grid, resolution):
        n = grid * grid + 1
        w = np.broadcast_to(np.eye(n), (2, 2, n, n)).copy()
        save_attention(path, AttentionStack(w, grid=grid, resolution=resolution))

    def test_identity_attention_empty_fibers(self, tmp_path, bundle_file, space_file):
        img_out = tmp_path / "img.tfim"
        assert run("image", "--bundle", bundle_file, "--space", space_file, "--out", img_out, "--resolution", 16) == 0
        att_path = tmp_path / "a.tfat"
        self._write_identity_attention(att_path, grid=4, resolution=16)
        out_dir = tmp_path / "interp"
        code = run(
            "interpret", "--attention", att_path, "--image", img_out, "--map", img_out.with_suffix(".tfpm"),
            "--bundle", bundle_file, "--out-dir", out_dir, "--channel", "left",
        )
        assert code == 0
        doc = json.loads((out_dir / "discriminative.json").read_text())
        assert doc["fiber_ids"] == []
        assert (out_dir / "attention_map.tfim").is_file()

    def test_peaked_attention_recovers_fibers(self, tmp_path, bundle_file, space_file):
        img_out = tmp_path / "img.tfim"
        assert run("image", "--bundle", bundle_file, "--space", space_file, "--out", img_out, "--resolution", 16) == 0
        img = load_image(img_out, pixel_map_path=img_out.with_suffix(".tfpm"))
        # aim one strong patch at a populated left-channel pixel
        fid, (r, c) = next(iter(sorted(img.fiber_pixel_map[0].items())))
        grid = 4
        block = 16 // grid
        patch_idx = (r // block) * grid + (c // block)
        n = grid * grid + 1
        w = np.full((1, 1, n, n), 1e-4)
        w[0, 0, :, patch_idx + 1] = 1.0
        w /= w.sum(axis=3, keepdims=True)
        att_path = tmp_path / "peak.tfat"
        save_attention(att_path, AttentionStack(w, grid=grid, resolution=16))
        out_dir = tmp_path / "interp2"
        assert run(
            "interpret", "--attention", att_path, "--image", img_out, "--map", img_out.with_suffix(".tfpm"),
            "--bundle", bundle_file, "--out-dir", out_dir, "--channel", "left",
        ) == 0
        doc = json.loads((out_dir / "discriminative.json").read_text())
        assert fid in doc["fiber_ids"]

    def test_groupwise_interpret_multiple_attention_files(self, tmp_path, bundle_file, space_file):
        img_out = tmp_path / "img.tfim"
        assert run("image", "--bundle", bundle_file, "--space", space_file, "--out", img_out, "--resolution", 16) == 0
        img = load_image(img_out, pixel_map_path=img_out.with_suffix(".tfpm"))
        fid, (r, c) = next(iter(sorted(img.fiber_pixel_map[0].items())))
        grid = 4
        patch_idx = (r // (16 // grid)) * grid + (c // (16 // grid))
        n = grid * grid + 1
        paths = []
        for i in range(3):
            w = np.full((1, 1, n, n), 1e-4)
            w[0, 0, :, patch_idx + 1] = 1.0 - i * 0.1
            w /= w.sum(axis=3, keepdims=True)
            p = tmp_path / f"s{i}.tfat"
            save_attention(p, AttentionStack(w, grid=grid, resolution=16))
            paths.append(p)
        out_dir = tmp_path / "group"
        assert run(
            "interpret", "--attention", *paths, "--image", img_out, "--map", img_out.with_suffix(".tfpm"),
            "--bundle", bundle_file, "--out-dir", out_dir, "--channel", "left",
        ) == 0
        doc = json.loads((out_dir / "discriminative.json").read_text())
        assert fid in doc["fiber_ids"]

    def test_malformed_attention_exit_2(self, tmp_path, bundle_file, space_file):
        img_out = tmp_path / "img.tfim"
        assert run("image", "--bundle", bundle_file, "--space", space_file, "--out", img_out, "--resolution", 16) == 0
        att_path = tmp_path / "bad.tfat"
        att_path.write_bytes(b"NOTA" + b"\x00" * 16)
        code = run(
            "interpret", "--attention", att_path, "--image", img_out, "--map", img_out.with_suffix(".tfpm"),
            "--bundle", bundle_file, "--out-dir", tmp_path / "x", "--channel", "left",
        )
        assert code == 2

    def test_channel_required_for_multichannel(self, tmp_path, bundle_file, space_file):
        img_out = tmp_path / "img.tfim"
        assert run("image", "--bundle", bundle_file, "--space", space_file, "--out", img_out, "--resolution", 16) == 0
        att_path = tmp_path / "a.tfat"
        self._write_identity_attention(att_path, grid=4, resolution=16)
        code = run(
            "interpret", "--attention", att_path, "--image", img_out, "--map", img_out.with_suffix(".tfpm"),
            "--bundle", bundle_file, "--out-dir", tmp_path / "y",
        )
        assert code == 2


class TestDiffmapCommand:
    def test_end_to_end(self, tmp_path):
        cohort_dir = tmp_path / "cohort"
        assert run("synth", "--out-dir", cohort_dir, "--bundles", 2, "--fibers-per-bundle", 20, "--subjects-per-group", 3, "--seed", 8) == 0
        space_out = tmp_path / "space.tfes"
        assert run("space", "--bundle", cohort_dir / "base.tfbd", "--out", space_out, "--sigma", 30, "--k", 5, "--landmarks", 40, "--seed", 9) == 0
        img_dir = tmp_path / "images"
        img_dir.mkdir()
        manifest = json.loads((cohort_dir / "cohort.json").read_text())
        for entry in manifest["subjects"]:
            assert run(
                "image", "--bundle", cohort_dir / entry["file"], "--space", space_out,
                "--out", img_dir / f"{entry['id']}.tfim", "--resolution", 8,
            ) == 0
        out = tmp_path / "tmap.tfim"
        assert run("diffmap", "--manifest", cohort_dir / "cohort.json", "--images", img_dir, "--out", out) == 0
        tmap = load_image(out)
        assert tmap.pixels.shape == (3, 8, 8)
        assert tmap.feature == "welch_t"

    def test_missing_subject_image_exit_2(self, tmp_path):
        cohort_dir = tmp_path / "cohort"
        assert run("synth", "--out-dir", cohort_dir, "--bundles", 2, "--fibers-per-bundle", 5, "--subjects-per-group", 2, "--seed", 10) == 0
        empty = tmp_path / "none"
        empty.mkdir()
        assert run("diffmap", "--manifest", cohort_dir / "cohort.json", "--images", empty, "--out", tmp_path / "t.tfim") == 2
