"""PSNR/SSIM metrics and the command-line interface."""

import json
import math
import os

import numpy as np
import pytest

from trajfield import metrics
from trajfield.cli import main


class TestPsnr:
    def test_identical_infinite(self):
        img = np.random.default_rng(0).uniform(0, 1, (24, 32, 3))
        assert metrics.psnr(img, img) == math.inf

    def test_uniform_offset_20db(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(0.2, 0.7, (24, 32, 3))   # clamp-free range
        b = a + 0.1
        assert np.isclose(metrics.psnr(a, b), 20.0, atol=1e-9)

    def test_mask_restricts_error(self):
        a = np.zeros((24, 32, 3))
        b = a.copy()
        b[:12] += 0.5
        mask = np.zeros((24, 32), dtype=bool)
        mask[12:] = True
        assert metrics.psnr(a, b, mask=mask) == math.inf

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            metrics.psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSsim:
    def test_identical_one(self):
        img = np.random.default_rng(2).uniform(0, 1, (32, 48, 3))
        assert np.isclose(metrics.ssim(img, img), 1.0, atol=1e-12)

    def test_independent_noise_near_zero(self):
        rng = np.random.default_rng(3)
        vals = []
        for _ in range(10):
            a = rng.uniform(0, 1, (48, 64))
            b = rng.uniform(0, 1, (48, 64))
            vals.append(metrics.ssim(a, b))
        assert all(abs(v) < 0.1 for v in vals)

    def test_degrades_with_blur_strength(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(0, 1, (48, 64))
        light = a + rng.normal(0, 0.02, a.shape)
        heavy = a + rng.normal(0, 0.3, a.shape)
        assert metrics.ssim(a, heavy) < metrics.ssim(a, light) < 1.0

    def test_empty_mask_none(self):
        img = np.random.default_rng(5).uniform(0, 1, (32, 48, 3))
        assert metrics.ssim(img, img, mask=np.zeros((32, 48), bool)) is None


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("ds")
    rc = main(["make-scene", "--preset", "moving-sphere", "--frames", "8",
               "--seed", "7", "--out", str(d)])
    assert rc == 0
    return str(d)


@pytest.fixture(scope="module")
def trained_dir(scene_dir, tmp_path_factory):
    d = tmp_path_factory.mktemp("ck")
    rc = main(["train", "--data", scene_dir, "--out", str(d),
               "--epochs", "1", "--steps-per-epoch", "2", "--n-samples", "8",
               "--width", "16", "--depth", "3", "--embed-dim", "8",
               "--color-width", "16", "--batch-uniform", "8",
               "--batch-mask", "4", "--shard-rays", "6", "--seed", "0"])
    assert rc == 0
    return str(d)


class TestCli:
    def test_make_scene_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert main(["make-scene", "--preset", "static-plane", "--frames",
                         "6", "--seed", "7", "--out", str(d)]) == 0
        files = sorted(os.path.relpath(os.path.join(r, f), a)
                       for r, _, fs in os.walk(a) for f in fs)
        assert files
        for rel in files:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_unknown_preset_fails_listing(self, tmp_path, capsys):
        rc = main(["make-scene", "--preset", "bogus", "--out", str(tmp_path)])
        assert rc == 1
        assert "moving-sphere" in capsys.readouterr().err

    def test_train_writes_log_and_checkpoint(self, trained_dir):
        assert os.path.isfile(os.path.join(trained_dir, "final.ckpt"))
        log = os.path.join(trained_dir, "train_log.ndjson")
        lines = [json.loads(l) for l in open(log)]
        assert len(lines) == 2
        assert all(k in lines[0] for k in ("total", "cycle", "flow", "svs"))

    def test_render_png_and_ppm(self, scene_dir, trained_dir, tmp_path):
        ck = os.path.join(trained_dir, "final.ckpt")
        out_png = str(tmp_path / "f.png")
        rc = main(["render", "--checkpoint", ck, "--data", scene_dir,
                   "--time", "2", "--out", out_png, "--n-samples", "8"])
        assert rc == 0 and os.path.getsize(out_png) > 0
        out_ppm = str(tmp_path / "f.ppm")
        rc = main(["render", "--checkpoint", ck, "--data", scene_dir,
                   "--time", "2", "--out", out_ppm, "--n-samples", "8"])
        assert rc == 0
        head = open(out_ppm).read(20).split()
        assert head[0] == "P3" and head[1] == "96" and head[2] == "64"

    def test_render_time_bounds(self, scene_dir, trained_dir, tmp_path):
        ck = os.path.join(trained_dir, "final.ckpt")
        out = str(tmp_path / "x.png")
        rc = main(["render", "--checkpoint", ck, "--data", scene_dir,
                   "--time", "11", "--out", out, "--n-samples", "8"])
        assert rc == 1
        rc = main(["render", "--checkpoint", ck, "--data", scene_dir,
                   "--time", "11", "--out", out, "--n-samples", "8",
                   "--extrapolate"])
        assert rc == 0

    def test_render_t_query(self, scene_dir, trained_dir, tmp_path):
        ck = os.path.join(trained_dir, "final.ckpt")
        out = str(tmp_path / "q.png")
        rc = main(["render", "--checkpoint", ck, "--data", scene_dir,
                   "--time", "2", "--t-query", "5", "--out", out,
                   "--n-samples", "8"])
        assert rc == 0

    def test_eval_report(self, scene_dir, trained_dir, tmp_path, capsys):
        ck = os.path.join(trained_dir, "final.ckpt")
        out = str(tmp_path / "report.json")
        rc = main(["eval", "--checkpoint", ck, "--data", scene_dir,
                   "--frames", "2", "--n-samples", "8", "--out", out])
        assert rc == 0
        rep = json.loads(open(out).read())
        assert rep["frames"][0]["frame"] == 2
        assert "psnr" in rep["aggregate"] and "ssim_dynamic" in rep["aggregate"]

    def test_export_traj(self, scene_dir, trained_dir, tmp_path):
        ck = os.path.join(trained_dir, "final.ckpt")
        out = str(tmp_path / "traj.json")
        rc = main(["export-traj", "--checkpoint", ck, "--data", scene_dir,
                   "--t0", "0", "--grid", "16", "--n-samples", "8",
                   "--out", out])
        assert rc == 0
        doc = json.loads(open(out).read())
        assert doc["T"] == 8 and doc["K"] == 7
        pt = doc["points"][0]
        assert len(pt["track"]) == 8 and len(pt["coeffs"]) == 3
        assert len(pt["coeffs"][0]) == 7

    def test_resume_cli(self, scene_dir, tmp_path):
        full, res = tmp_path / "full", tmp_path / "res"
        args = ["--data", scene_dir, "--epochs", "2", "--steps-per-epoch", "2",
                "--n-samples", "8", "--width", "16", "--depth", "3",
                "--embed-dim", "8", "--color-width", "16",
                "--batch-uniform", "8", "--batch-mask", "4",
                "--shard-rays", "6", "--seed", "0", "--checkpoint-every", "1"]
        assert main(["train", "--out", str(full)] + args) == 0
        assert main(["train", "--out", str(res), "--resume",
                     str(full / "epoch_001.ckpt")] + args) == 0
        assert (full / "final.ckpt").read_bytes() == \
            (res / "final.ckpt").read_bytes()

    def test_bad_data_dir_nonzero(self, tmp_path):
        rc = main(["train", "--data", str(tmp_path / "missing"),
                   "--out", str(tmp_path / "o")])
        assert rc == 1
