"""Command-line interface, driven in-process through main(argv)."""

import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import tiny_config
from rotequiv import config_to_text
from rotequiv.cli import main
from rotequiv.harness import Dataset


@pytest.fixture()
def tiny_cfg_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(config_to_text(tiny_config()))
    return str(path)


def _read_manifest(out_dir):
    with open(f"{out_dir}/manifest.json") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# check


def test_check_default_is_strict(capsys, tmp_path):
    out = tmp_path / "chk"
    rc = main(["check", "--out", str(out)])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "verdict: strict" in stdout
    csv = (out / "strictness.csv").read_text().strip().split("\n")
    assert csv[0] == "layer,name,padded_in,k,s,residue,verdict"
    assert all(line.endswith(",ok") for line in csv[1:])
    assert _read_manifest(out)["command"].startswith("rotequiv check")


def test_check_approx_fails_and_names_layer(capsys):
    rc = main(["check", "--mode", "approx"])
    assert rc == 1
    stdout = capsys.readouterr().out
    assert "NOT strict" in stdout
    assert "stage1.down.conv" in stdout


def test_check_rejects_bad_override(capsys):
    rc = main(["check", "--set", "orientations=1"])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# equiv-error


def test_equiv_error_strict_tiny(capsys, tmp_path, tiny_cfg_file):
    out = tmp_path / "eq"
    rc = main(["equiv-error", "--config", tiny_cfg_file, "--inputs", "2",
               "--out", str(out)])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "worst normalized epsilon" in stdout
    lines = (out / "equivariance.csv").read_text().strip().split("\n")
    assert lines[0] == "stage,angle_deg,epsilon,epsilon_normalized"
    stages = {line.split(",")[0] for line in lines[1:]}
    assert stages == {"S0", "S1", "S2", "head"}
    worst = max(float(line.split(",")[3]) for line in lines[1:])
    assert worst <= 1e-5
    man = _read_manifest(out)
    assert man["angles"] == [90.0, 180.0, 270.0]
    assert len(man["model_fingerprint"]) == 16


def test_equiv_error_rejects_off_grid_angle(capsys):
    rc = main(["equiv-error", "--angles", "45"])
    assert rc == 2
    assert "multiple of 90" in capsys.readouterr().err


def test_equiv_error_checkpoint_conflicts_with_config(capsys, tmp_path):
    rc = main(["equiv-error", "--checkpoint", str(tmp_path / "x.ckpt"),
               "--mode", "approx"])
    assert rc == 2
    assert "drop --config/--mode/--set" in capsys.readouterr().err


def test_equiv_error_reruns_byte_identical(tmp_path, tiny_cfg_file, capsys):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["equiv-error", "--config", tiny_cfg_file, "--inputs", "2",
                     "--seed", "3", "--out", str(out)]) == 0
        outs.append((out / "equivariance.csv").read_bytes())
    capsys.readouterr()
    assert outs[0] == outs[1]


# ---------------------------------------------------------------------------
# gradcheck


def test_gradcheck_named_cases(capsys, tmp_path):
    out = tmp_path / "gc"
    rc = main(["gradcheck", "--op", "relu,matmul", "--out", str(out)])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "all ok" in stdout
    lines = (out / "gradcheck.csv").read_text().strip().split("\n")
    assert lines[0] == "op,rel_error,verdict"
    assert len(lines) == 3
    for line in lines[1:]:
        op, err, verdict = line.split(",")
        assert verdict == "ok"
        assert float(err) <= 1e-4


def test_gradcheck_unknown_case(capsys):
    rc = main(["gradcheck", "--op", "frobnicate"])
    assert rc == 2
    assert "unknown gradcheck case" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# mismatch-demo


def test_mismatch_demo(capsys, tmp_path):
    out = tmp_path / "mm"
    rc = main(["mismatch-demo", "--n", "3", "--out", str(out)])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "row-parity disjoint: True" in stdout
    lines = (out / "mismatch.csv").read_text().strip().split("\n")
    assert lines[0] == "which,x,y"
    assert len(lines) == 1 + 2 * 9


def test_mismatch_demo_rejects_zero(capsys):
    rc = main(["mismatch-demo", "--n", "0"])
    assert rc == 2


# ---------------------------------------------------------------------------
# gen-data


def test_gen_data_outputs(capsys, tmp_path):
    out = tmp_path / "data"
    rc = main(["gen-data", "--n-train", "8", "--n-test", "4",
               "--image-size", "32", "--seed", "5", "--out", str(out)])
    assert rc == 0
    assert "wrote 8 train / 4 test samples" in capsys.readouterr().out
    train = Dataset.load(out / "train.npz")
    test = Dataset.load(out / "test.npz")
    assert len(train) == 8 and len(test) == 4
    assert train.images.shape == (8, 1, 32, 32)
    pgms = sorted(out.glob("sample_*.pgm"))
    assert len(pgms) == 4
    head = pgms[0].read_text().split("\n")[:3]
    assert head == ["P2", "32 32", "255"]
    man = _read_manifest(out)
    assert man["seed"] == 5
    assert man["image_size"] == 32


# ---------------------------------------------------------------------------
# train + robustness


def _train_tiny(tmp_path, name, extra=()):
    out = tmp_path / name
    cfg = tmp_path / f"{name}.cfg"
    cfg.write_text(config_to_text(tiny_config()))
    argv = ["train", "--config", str(cfg), "--epochs", "1",
            "--batch-size", "8", "--n-train", "16", "--n-test", "8",
            "--lr", "1e-3", "--out", str(out), *extra]
    return main(argv), out


def test_train_writes_everything(capsys, tmp_path):
    rc, out = _train_tiny(tmp_path, "run")
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "done: accuracy" in stdout
    lines = (out / "training.csv").read_text().strip().split("\n")
    assert lines[0].startswith("epoch,loss,accuracy,angular_error_deg,eps_S0")
    assert len(lines) == 3
    assert lines[1].split(",")[0] == "0"
    for ckpt in ("initial.ckpt", "last.ckpt", "final.ckpt"):
        assert (out / ckpt).exists(), ckpt
    man = _read_manifest(out)
    assert man["augment_rot90"] is True
    assert man["n_train"] == 16
    assert "[network]" in man["config"]


def test_train_reruns_byte_identical(capsys, tmp_path):
    _, out_a = _train_tiny(tmp_path, "a")
    _, out_b = _train_tiny(tmp_path, "b")
    capsys.readouterr()
    assert (out_a / "training.csv").read_bytes() == (out_b / "training.csv").read_bytes()


def test_train_epochs_zero_only_initial(capsys, tmp_path):
    rc, out = _train_tiny(tmp_path, "zero", extra=("--epochs", "0"))
    assert rc == 0
    capsys.readouterr()
    assert (out / "initial.ckpt").exists()
    assert not (out / "final.ckpt").exists()
    lines = (out / "training.csv").read_text().strip().split("\n")
    assert len(lines) == 2


def test_train_resume_conflicts_with_config_flags(capsys, tmp_path):
    rc = main(["train", "--resume", "x.ckpt", "--mode", "approx",
               "--out", str(tmp_path / "r")])
    assert rc == 2
    assert "drop --config/--mode/--set" in capsys.readouterr().err


def test_robustness_from_checkpoint(capsys, tmp_path):
    rc, out = _train_tiny(tmp_path, "base")
    assert rc == 0
    sweep = tmp_path / "sweep"
    rc = main(["robustness", "--checkpoint", str(out / "final.ckpt"),
               "--angles", "0,90", "--n-test", "8", "--out", str(sweep)])
    assert rc == 0
    assert "accuracy" in capsys.readouterr().out
    lines = (sweep / "robustness.csv").read_text().strip().split("\n")
    assert lines[0] == "angle_deg,accuracy,mean_angular_error_deg"
    assert len(lines) == 3
    for line in lines[1:]:
        _, acc, err = line.split(",")
        assert 0.0 <= float(acc) <= 1.0
        assert 0.0 <= float(err) <= 180.0


def test_robustness_missing_checkpoint(capsys, tmp_path):
    rc = main(["robustness", "--checkpoint", str(tmp_path / "nope.ckpt")])
    assert rc == 2
    assert "nope.ckpt" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# module entry point


def test_module_invocation_smoke():
    proc = subprocess.run([sys.executable, "-m", "rotequiv", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip() == "rotequiv 0.1.0"
