"""Tests for the gmae command line."""

import json

import numpy as np
import pytest
from PIL import Image

from gmae.cli import build_parser, main


def _write_png(path, size=16, seed=0):
    rng = np.random.default_rng(seed)
    Image.fromarray(rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)).save(path)
    return path


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    """A 16x16 image and an 8-Gaussian scene fitted to it by 'gmae fit'."""
    root = tmp_path_factory.mktemp("scene")
    image = _write_png(root / "img.png")
    # Left half white, right half black.
    truth = np.zeros((16, 16), dtype=np.uint8)
    truth[:, :8] = 255
    Image.fromarray(truth).save(root / "truth.png")
    code = main([
        "fit", "--input", str(image), "--preset", "gradcheck", "--k", "8", "--steps", "3",
        "--out", str(root / "fit"), "-q",
    ])
    assert code == 0
    return root


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    """A freshly initialized gradcheck-size checkpoint from 'gmae train --epochs 0'."""
    out = tmp_path_factory.mktemp("train")
    code = main(["train", "--shapes", "2", "--preset", "gradcheck", "--epochs", "0", "--out", str(out), "-q"])
    assert code == 0
    return out / "checkpoint_epoch0000.gmae"


class TestParser:
    def test_subcommands(self):
        parser = build_parser()
        args = parser.parse_args(["segment", "--scene", "s.npz", "--layers", "8", "--split", "3"])
        assert (args.command, args.layers, args.split) == ("segment", 8, 3)

    def test_bad_flag_exits_2(self):
        with pytest.raises(SystemExit) as err:
            main(["train", "--no-such-flag"])
        assert err.value.code == 2

    def test_missing_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as err:
            main([])
        assert err.value.code == 2


class TestExitCodes:
    """Domain errors map to their exit codes."""

    def test_invalid_config(self, tmp_path):
        """mask ratio 0 with the masked loss is rejected before training."""
        code = main(["train", "--shapes", "2", "--mask-ratio", "0", "--epochs", "0", "--out", str(tmp_path)])
        assert code == 3

    def test_train_without_data(self, tmp_path):
        assert main(["train", "--out", str(tmp_path)]) == 3

    def test_bad_config_file_key(self, tmp_path):
        config = tmp_path / "run.txt"
        config.write_text("not_a_key = 1\n")
        assert main(["train", "--shapes", "2", "--config", str(config), "--out", str(tmp_path)]) == 3

    def test_missing_checkpoint(self, tmp_path):
        image = _write_png(tmp_path / "a.png")
        code = main(["reconstruct", "--ckpt", str(tmp_path / "absent.gmae"), "--input", str(image)])
        assert code == 4

    def test_missing_resume_checkpoint(self, tmp_path):
        code = main(["train", "--shapes", "2", "--preset", "gradcheck", "--epochs", "1",
                     "--resume", str(tmp_path / "absent.gmae"), "--out", str(tmp_path / "run")])
        assert code == 4

    def test_corrupt_checkpoint(self, tmp_path):
        bad = tmp_path / "bad.gmae"
        bad.write_bytes(b"GMAECKPT")
        image = _write_png(tmp_path / "a.png")
        assert main(["reconstruct", "--ckpt", str(bad), "--input", str(image)]) == 5

    def test_unreadable_image(self, checkpoint, tmp_path):
        junk = tmp_path / "junk.png"
        junk.write_bytes(b"not an image")
        code = main(["reconstruct", "--ckpt", str(checkpoint), "--input", str(junk), "--out", str(tmp_path)])
        assert code == 10

    def test_source_required(self, tmp_path):
        assert main(["layers", "--out", str(tmp_path)]) == 3

    def test_too_few_layers(self, scene, tmp_path):
        code = main(["layers", "--scene", str(scene / "fit" / "img.npz"), "--layers", "1", "--out", str(tmp_path)])
        assert code == 3


class TestTrainAndReconstruct:
    def test_train_writes_run_files(self, checkpoint):
        run_dir = checkpoint.parent
        assert checkpoint.is_file()
        assert "preset = gradcheck" in (run_dir / "config.txt").read_text()

    def test_reconstruct_unmasked(self, checkpoint, tmp_path):
        image = _write_png(tmp_path / "a.png")
        out = tmp_path / "out"
        code = main([
            "reconstruct", "--ckpt", str(checkpoint), "--input", str(image), "--mask-ratio", "0",
            "--out", str(out), "-q",
        ])
        assert code == 0
        # Two panels (input, render) with a 2 px gap.
        with Image.open(out / "a_recon.png") as img:
            assert img.size == (16 * 2 + 2, 16)
        report = json.loads((out / "metrics.json").read_text())
        assert report["images"][0]["name"] == "a"

    def test_reconstruct_masked_shows_three_panels(self, checkpoint, tmp_path):
        image = _write_png(tmp_path / "a.png")
        out = tmp_path / "out"
        assert main(["reconstruct", "--ckpt", str(checkpoint), "--input", str(image), "--out", str(out), "-q"]) == 0
        with Image.open(out / "a_recon.png") as img:
            assert img.size == (16 * 3 + 4, 16)


class TestSceneCommands:
    """Zero-shot commands run on a fitted scene file."""

    def test_fit_outputs(self, scene):
        fit_dir = scene / "fit"
        with np.load(fit_dir / "img.npz") as data:
            assert data["raw"].shape == (8, 14)
            assert data["image"].shape == (16, 16, 3)
        assert (fit_dir / "img_fit.png").is_file()
        lines = (fit_dir / "img_fit_loss.csv").read_text().splitlines()
        assert lines[0] == "step,loss"
        assert len(lines) == 4

    def test_layers(self, scene, tmp_path):
        code = main(["layers", "--scene", str(scene / "fit" / "img.npz"), "--layers", "4", "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "img_layers_d4.png").is_file()
        assert (tmp_path / "img_layerwise_d4.png").is_file()

    def test_edges_with_truth(self, scene, tmp_path):
        code = main([
            "edges", "--scene", str(scene / "fit" / "img.npz"), "--edge-layers", "2", "4",
            "--truth", str(scene / "truth.png"), "--out", str(tmp_path),
        ])
        assert code == 0
        assert (tmp_path / "img_edges_d2.png").is_file()
        assert (tmp_path / "img_edges_d4.png").is_file()
        report = json.loads((tmp_path / "metrics.json").read_text())
        assert [e["name"] for e in report["images"]] == ["img_d2", "img_d4"]
        assert all(0.0 <= e["boundary_f1"] <= 1.0 for e in report["images"])

    def test_segment_fixed_split(self, scene, tmp_path):
        code = main([
            "segment", "--scene", str(scene / "fit" / "img.npz"), "--layers", "4", "--split", "2",
            "--out", str(tmp_path),
        ])
        assert code == 0
        assert (tmp_path / "img_mask_t2.png").is_file()
        report = json.loads((tmp_path / "metrics.json").read_text())
        assert report["images"][0]["split"] == 2
        assert report["images"][0]["iou"] is None

    def test_segment_swept_against_truth(self, scene, tmp_path):
        code = main([
            "segment", "--scene", str(scene / "fit" / "img.npz"), "--layers", "4",
            "--truth", str(scene / "truth.png"), "--out", str(tmp_path),
        ])
        assert code == 0
        report = json.loads((tmp_path / "metrics.json").read_text())
        entry = report["images"][0]
        assert 0 <= entry["split"] <= 4
        assert 0.0 <= entry["iou"] <= 1.0
        assert (tmp_path / f"img_mask_t{entry['split']}.png").is_file()

    def test_prefix_render(self, scene, tmp_path):
        assert main(["prefix-render", "--scene", str(scene / "fit" / "img.npz"), "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "img_prefix_curve.csv").read_text().splitlines()
        # k = 8 is below the first doubling size, so only the full set is rendered.
        assert lines == ["k,mean_abs_diff", "8,0"]
        assert (tmp_path / "img_prefix.png").is_file()

    def test_diag(self, scene, tmp_path):
        assert main(["diag", "--scene", str(scene / "fit" / "img.npz"), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "img_scale_depth.png").is_file()
        assert (tmp_path / "img_centers_xy.png").is_file()


class TestGradcheck:
    def test_small_run_passes(self, capsys):
        code = main([
            "gradcheck", "--single-scenes", "1", "--multi-scenes", "1", "--backbone-coords", "3", "-q",
        ])
        assert code == 0
        assert "PASS" in capsys.readouterr().out
