import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from dvrm.cli import main, read_pgm, write_pgm
from dvrm.container import read_container
from dvrm.model import ModelParams
from dvrm.training import load_checkpoint

SMALL = ["--num-rdb", "1", "--base-channels", "8", "--growth-channels", "4", "--conv-layers-per-rdb", "2",
         "--latent-dim", "4", "--batch-size", "4", "--iterations-per-epoch", "3"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "0-1"
    assert main(["gen-data", "--combo", "0-1", "--seed", "7", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    ckpt = out / "model.dvrm"
    assert main(["train", "--data", str(data_dir), "--out", str(ckpt), "--epochs", "2", "--seed", "1", *SMALL]) == 0
    return ckpt


class TestGenData:
    def test_files(self, data_dir):
        assert sorted(os.listdir(data_dir)) == ["manifest.json", "test.dvrm", "train.dvrm", "val.dvrm"]
        assert json.load(open(data_dir / "manifest.json"))["seed"] == 7
        assert read_container(data_dir / "test.dvrm")["signals"].shape == (50, 32, 135)

    def test_identical_bytes(self, data_dir, tmp_path):
        assert main(["gen-data", "--combo", "0-1", "--seed", "7", "--out", str(tmp_path)]) == 0
        for name in os.listdir(data_dir):
            assert (data_dir / name).read_bytes() == (tmp_path / name).read_bytes()

    def test_unknown_combo(self, tmp_path, capsys):
        assert main(["gen-data", "--combo", "9-9", "--out", str(tmp_path)]) == 1
        err = capsys.readouterr().err
        assert "0-1" in err and "BRAINS" in err

    def test_seed_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DVRM_SEED", "7")
        assert main(["gen-data", "--combo", "BRAINS", "--out", str(tmp_path)]) == 0
        assert json.load(open(tmp_path / "manifest.json"))["seed"] == 7

    def test_bad_seed_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DVRM_SEED", "abc")
        assert main(["gen-data", "--combo", "BRAINS", "--out", str(tmp_path)]) == 1

    def test_missing_required_flag(self):
        with pytest.raises(SystemExit) as info:
            main(["gen-data", "--out", "x"])
        assert info.value.code == 1


class TestPreprocess:
    def test_raw_round_trip(self, tmp_path):
        assert main(["gen-data", "--combo", "BRAINS", "--seed", "1", "--out", str(tmp_path), "--raw"]) == 0
        assert main(["preprocess", "--input", str(tmp_path / "raw.dvrm"), "--out", str(tmp_path / "ep.dvrm")]) == 0
        ep = read_container(tmp_path / "ep.dvrm")
        assert ep["signals"].shape == (300, 32, 135)

    def test_not_a_recording(self, data_dir, tmp_path):
        assert main(["preprocess", "--input", str(data_dir / "test.dvrm"), "--out", str(tmp_path / "x")]) == 2

    def test_corrupt_file(self, tmp_path):
        (tmp_path / "bad.dvrm").write_bytes(b"garbage!garbage!")
        assert main(["preprocess", "--input", str(tmp_path / "bad.dvrm"), "--out", str(tmp_path / "x")]) == 2


class TestTrain:
    def test_loss_rows(self, trained):
        rows = (trained.parent / "loss.csv").read_text().splitlines()
        assert rows[0] == "iteration,loss" and len(rows) == 1 + 2 * 3
        _, meta = load_checkpoint(trained)
        assert meta["status"] == "ok" and meta["config"]["latent_dim"] == 4

    def test_zero_epochs_equals_init(self, data_dir, tmp_path):
        ckpt = tmp_path / "m.dvrm"
        assert main(["train", "--data", str(data_dir), "--out", str(ckpt), "--epochs", "0", "--seed", "3", *SMALL]) == 0
        params, _ = load_checkpoint(ckpt)
        init = ModelParams.init(params.arch, seed=3)
        for a, b in zip(params.arrays().values(), init.arrays().values()):
            np.testing.assert_array_equal(a, b)

    def test_divergence_exit_code(self, data_dir, tmp_path):
        ckpt = tmp_path / "m.dvrm"
        argv = ["train", "--data", str(data_dir), "--out", str(ckpt), "--epochs", "3", *SMALL,
                "--iterations-per-epoch", "40", "--lr", "1000"]
        assert main(argv) == 3
        params, meta = load_checkpoint(ckpt)
        assert meta["status"] == "diverged"
        assert all(np.isfinite(a).all() for a in params.arrays().values())

    def test_config_file_and_precedence(self, data_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 5, "latent_dim": 6}))
        ckpt = tmp_path / "m.dvrm"
        assert main(["train", "--data", str(data_dir), "--out", str(ckpt), "--config", str(cfg), *SMALL,
                     "--epochs", "1"]) == 0
        _, meta = load_checkpoint(ckpt)
        # flags beat the file
        assert meta["config"]["epochs"] == 1
        assert meta["config"]["latent_dim"] == 4

    def test_config_file_value_used(self, data_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 0, "kl_weight": 0.5}))
        ckpt = tmp_path / "m.dvrm"
        assert main(["train", "--data", str(data_dir), "--out", str(ckpt), "--config", str(cfg), *SMALL]) == 0
        assert load_checkpoint(ckpt)[1]["config"]["kl_weight"] == 0.5

    def test_unknown_config_key(self, data_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochz": 1}))
        assert main(["train", "--data", str(data_dir), "--out", str(tmp_path / "m"), "--config", str(cfg)]) == 1

    def test_missing_data(self, tmp_path):
        assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "m")]) == 2


class TestReconstructEvaluate:
    def test_reconstruct(self, trained, data_dir, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["reconstruct", "--checkpoint", str(trained), "--data", str(data_dir), "--out", str(out)]) == 0
        pgms = sorted(f for f in os.listdir(a) if f.endswith(".pgm"))
        assert len(pgms) == 50 and pgms[0] == "0000.pgm"
        for f in os.listdir(a):
            assert (a / f).read_bytes() == (b / f).read_bytes()
        img = read_pgm(a / pgms[0])
        assert img.shape == (28, 28)
        index = list(csv.DictReader(open(a / "index.csv")))
        assert index[0]["group"] == "0-1" and len(index) == 50

    def test_identical_dirs(self, trained, data_dir, tmp_path):
        rec = tmp_path / "rec"
        assert main(["reconstruct", "--checkpoint", str(trained), "--data", str(data_dir), "--out", str(rec)]) == 0
        rep = tmp_path / "rep"
        assert main(["evaluate", "--targets", str(rec), "--reconstructions", str(rec), "--out", str(rep)]) == 0
        rows = list(csv.DictReader(open(rep / "report.csv")))
        assert list(rows[0]) == ["pair_id", "pcc", "ssim", "psnr_db", "mse"]
        assert all(float(r["pcc"]) == 1.0 and float(r["mse"]) == 0.0 for r in rows)
        table = (rep / "table.txt").read_text()
        assert "Average" in table

    def test_knn_study(self, trained, data_dir, tmp_path):
        rec, tgt, rep = tmp_path / "rec", tmp_path / "tgt", tmp_path / "rep"
        assert main(["reconstruct", "--checkpoint", str(trained), "--data", str(data_dir), "--out", str(rec),
                     "--targets-out", str(tgt)]) == 0
        assert main(["evaluate", "--targets", str(tgt), "--reconstructions", str(rec), "--out", str(rep),
                     "--checkpoint", str(trained), "--data", str(data_dir)]) == 0
        knn = json.load(open(rep / "knn.json"))
        assert knn["k"] == 5 and knn["n"] == 50 and 0.0 <= knn["accuracy"] <= 1.0
        assert (rep / "confusion.csv").read_text().startswith("true\\pred,0,1\n")

    def test_targets_from_container(self, trained, data_dir, tmp_path):
        rec, rep = tmp_path / "rec", tmp_path / "rep"
        assert main(["reconstruct", "--checkpoint", str(trained), "--data", str(data_dir), "--out", str(rec)]) == 0
        argv = ["evaluate", "--targets", str(data_dir / "test.dvrm"), "--reconstructions", str(rec), "--out", str(rep)]
        assert main(argv) == 0
        assert len((rep / "report.csv").read_text().splitlines()) == 51

    def test_missing_targets(self, tmp_path):
        (tmp_path / "r").mkdir()
        (tmp_path / "t").mkdir()
        write_pgm(str(tmp_path / "r" / "0000.pgm"), np.zeros((28, 28)))
        argv = ["evaluate", "--targets", str(tmp_path / "t"), "--reconstructions", str(tmp_path / "r"),
                "--out", str(tmp_path / "o")]
        assert main(argv) == 2


class TestPGM:
    def test_round_trip(self, tmp_path):
        img = np.random.default_rng(0).random((28, 28))
        write_pgm(str(tmp_path / "x.pgm"), img)
        blob = (tmp_path / "x.pgm").read_bytes()
        assert blob.startswith(b"P5\n28 28\n255\n") and len(blob) == 13 + 784
        np.testing.assert_array_equal(read_pgm(str(tmp_path / "x.pgm")) * 255, np.round(img * 255))


class TestGradCheck:
    def test_passes(self, capsys):
        assert main(["grad-check", "--max-entries", "4"]) == 0
        out = capsys.readouterr().out
        assert "enc.conv1.w" in out and out.strip().splitlines()[-1].startswith("PASS")

    def test_injected_bug_fails(self, capsys):
        assert main(["grad-check", "--max-entries", "2", "--inject-bug", "1.01"]) == 3
        assert "FAIL" in capsys.readouterr().out


def test_console_module_runs():
    res = subprocess.run([sys.executable, "-m", "dvrm.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("dvrm ")


def test_help_documents_defaults():
    res = subprocess.run([sys.executable, "-m", "dvrm.cli", "train", "--help"], capture_output=True, text=True)
    assert "default 2e-05" in res.stdout and "default 2000" in res.stdout
