"""CLI subcommands: thin-adapter behavior, exit codes, machine-readable errors."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

import viewshift as vs
from viewshift import pnm
from viewshift.cli import main
from viewshift.manifest import load_frame_depth, load_frame_image
from viewshift.oracle import scene_spec_to_json

from conftest import plane_spec


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_scene")
    manifest = vs.gen_scene(vs.random_scene_spec(17, image_size=(32, 32), n_frames=2), out)
    return manifest


def _tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestGenScene:
    def test_gen_scene_from_spec_json(self, tmp_path, capsys):
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(scene_spec_to_json(plane_spec(size=16, fx=16.0))))
        assert main(["gen-scene", str(spec_path), str(tmp_path / "out")]) == 0
        assert (tmp_path / "out" / "manifest.json").is_file()
        assert "1 frames" in capsys.readouterr().out

    def test_missing_spec_exits_3(self, tmp_path, capsys):
        code = main(["gen-scene", str(tmp_path / "nope.json"), str(tmp_path / "out")])
        assert code == 3
        err = json.loads(capsys.readouterr().err)
        assert err["exit_code"] == 3


class TestShiftMaskSeam:
    def test_shift_zero_lateral_reproduces_raw_at_valid_pixels(self, scene, tmp_path, capsys):
        out = tmp_path / "shift_out"
        code = main(["shift", str(scene.source_path), str(out),
                     "--frame", "0", "--camera", "front", "--lateral", "0"])
        assert code == 0
        shifted = pnm.read_ppm(out / "shift.ppm")
        raw = load_frame_image(scene, 0, "front")
        valid = load_frame_depth(scene, 0, "front").validity
        np.testing.assert_array_equal(shifted[valid], raw.pixels[valid])
        assert (out / "effective_config.json").is_file()

    def test_mask_writes_flags_and_masked_image(self, scene, tmp_path):
        out = tmp_path / "mask_out"
        assert main(["mask", str(scene.source_path), str(out),
                     "--frame", "0", "--camera", "front", "--lateral", "1.0"]) == 0
        flags = pnm.read_pgm8(out / "mask.pgm")
        masked = pnm.read_ppm(out / "masked.ppm")
        assert set(np.unique(flags)) <= {0, 64, 128, 255}
        assert not masked[flags > 0].any()

    def test_seam_writes_warp_and_cond(self, scene, tmp_path):
        out = tmp_path / "seam_out"
        assert main(["seam", str(scene.source_path), str(out),
                     "--frame", "0", "--camera", "front", "--lateral", "2.0"]) == 0
        assert (out / "warp.ppm").is_file()
        assert (out / "cond.ppm").is_file()
        echo = json.loads((out / "effective_config.json").read_text())
        assert echo["neighbor"] == "front_left"

    def test_unknown_camera_exits_5(self, scene, tmp_path, capsys):
        code = main(["shift", str(scene.source_path), str(tmp_path / "x"),
                     "--frame", "0", "--camera", "nope", "--lateral", "0"])
        assert code == 5
        assert json.loads(capsys.readouterr().err)["error"] == "InvalidInputError"


class TestBuildVerifyReport:
    def test_build_verify_report_cycle(self, scene, tmp_path, capsys):
        out = tmp_path / "ds"
        assert main(["build-dataset", str(scene.source_path), str(out), "--seed", "3",
                     "--lateral-range", "-2", "2"]) == 0
        assert main(["verify", str(out)]) == 0
        assert "verified 6 samples" in capsys.readouterr().out
        rep = tmp_path / "report"
        assert main(["report", str(out), str(rep)]) == 0
        assert (rep / "mask_fractions.csv").read_text().startswith("bin_lo,bin_hi,count")
        sheet = pnm.read_ppm(rep / "contact_sheet.ppm")
        assert sheet.shape[1] == 3 * 32  # raw | cond | mask side by side

    def test_verify_detects_corruption_exit_7(self, scene, tmp_path, capsys):
        out = tmp_path / "ds2"
        main(["build-dataset", str(scene.source_path), str(out), "--seed", "3"])
        victim = next(out.rglob("cond.ppm"))
        data = bytearray(victim.read_bytes())
        data[-1] ^= 0x7F
        victim.write_bytes(bytes(data))
        code = main(["verify", str(out)])
        assert code == 7
        assert json.loads(capsys.readouterr().err)["error"] == "VerificationError"

    def test_same_seed_builds_identical_trees(self, scene, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert main(["build-dataset", str(scene.source_path), str(a), "--seed", "11"]) == 0
        assert main(["build-dataset", str(scene.source_path), str(b), "--seed", "11"]) == 0
        assert _tree_bytes(a) == _tree_bytes(b)

    def test_config_file_with_flag_override(self, scene, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"seed": 1, "stride": 2, "lateral_range": [-1, 1]}))
        out = tmp_path / "ds3"
        assert main(["build-dataset", str(scene.source_path), str(out),
                     "--config", str(cfg_path), "--seed", "2"]) == 0
        echo = json.loads((out / "effective_config.json").read_text())
        assert echo["config"]["seed"] == 2  # flag wins
        assert echo["config"]["stride"] == 2  # file value survives


class TestTrainSample:
    def test_train_and_sample_cycle(self, scene, tmp_path, capsys):
        ds = tmp_path / "ds"
        main(["build-dataset", str(scene.source_path), str(ds), "--seed", "5"])
        ckpt = tmp_path / "toy.ckpt"
        assert main(["train-toy", str(ds), str(ckpt), "--steps", "20", "--batch-size", "4",
                     "--hidden", "16", "--factor", "4", "--learning-rate", "0.2"]) == 0
        assert ckpt.is_file()
        trace = Path(str(ckpt.with_suffix(".loss.csv"))).read_text().splitlines()
        assert trace[0] == "step,loss"
        assert len(trace) == 21
        cond = next(ds.rglob("cond.ppm"))
        out_ppm = tmp_path / "gen.ppm"
        assert main(["sample", str(ckpt), str(cond), str(out_ppm), "--steps", "2"]) == 0
        assert pnm.read_ppm(out_ppm).shape == (32, 32, 3)

    def test_corrupt_checkpoint_exits_6(self, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage!")
        code = main(["sample", str(bad), "x.ppm", "y.ppm"])
        assert code == 6


class TestArgparseSurface:
    def test_unknown_flag_exits_2(self, scene, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["verify", str(tmp_path), "--bogus"])
        assert exc.value.code == 2

    def test_help_lists_exit_codes(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        assert "exit codes" in capsys.readouterr().out

    def test_console_entry_point(self, tmp_path):
        result = subprocess.run(
            [sys.executable, "-m", "viewshift.cli", "--help"],
            capture_output=True, text=True,
        )
        assert result.returncode == 0
        assert "build-dataset" in result.stdout
