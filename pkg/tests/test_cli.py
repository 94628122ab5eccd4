import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from gait import cli
from gait import dataset as ds
from gait.training import load_checkpoint

SMALL = {"image_size": 16,
         "generator": {"base_channels": 4, "n_res_blocks": 1},
         "discriminator": {"base_channels": 4},
         "train": {"batch_size": 2, "checkpoint_every": 0},
         "dataset": {"n_images": 6}}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


@pytest.fixture
def data_dir(tmp_path, small_config):
    out = tmp_path / "data"
    assert cli.main(["make-dataset", "--config", str(small_config), "--out", str(out)]) == 0
    return out


def _rows(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_make_dataset_defaults(tmp_path, capsys):
    out = tmp_path / "nested" / "missing"
    assert cli.main(["make-dataset", "--out", str(out), "--n-images", "3"]) == 0
    assert len(list((out / "S").glob("*.png"))) == 3 == len(list((out / "T").glob("*.png")))
    assert "wrote 3 images" in capsys.readouterr().out
    resolved = json.loads((out / cli.RESOLVED_CONFIG).read_text())
    assert resolved["dataset"]["n_images"] == 3


def test_default_config_image_counts():
    cfg = cli.RunConfig()
    assert cfg.dataset_spec().n_images == 400 and cfg.train_config().weights.lambda_grad == 630.0


def test_unknown_key_names_key(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"stepz": 3}}))
    assert cli.main(["make-dataset", "--config", str(bad), "--out", str(tmp_path / "d")]) == 1
    assert "train.stepz" in capsys.readouterr().err


def test_wrong_type_rejected(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"seed": "zero"}))
    assert cli.main(["make-dataset", "--config", str(bad), "--out", str(tmp_path / "d")]) == 1
    assert "seed" in capsys.readouterr().err


def test_flags_override_config(small_config):
    args = cli.build_parser().parse_args(["train", "--config", str(small_config), "--steps", "7", "--cga", "2"])
    cfg = cli.resolve_config(args)
    assert cfg.train.steps == 7 and cfg.loss.c_ga == 2.0 and cfg.image_size == 16


def _train(small_config, data_dir, run, *extra):
    return cli.main(["train", "--config", str(small_config), "--data-dir", str(data_dir),
                     "--out", str(run), "--log-every", "0", *extra])


def test_train_one_step(tmp_path, small_config, data_dir):
    run = tmp_path / "run"
    assert _train(small_config, data_dir, run, "--steps", "1") == 0
    rows = _rows(run / "loss.csv")
    assert len(rows) == 1 and all(np.isfinite(float(v)) for v in rows[0].values())
    assert (run / cli.RESOLVED_CONFIG).exists() and (run / "final.gait").exists()


def test_train_baseline_reports_grad_column(tmp_path, small_config, data_dir):
    run = tmp_path / "run"
    assert _train(small_config, data_dir, run, "--steps", "2", "--lambda-grad", "0") == 0
    for r in _rows(run / "loss.csv"):
        assert float(r["grad"]) > 0
        expected = float(r["adv_f_s"]) + float(r["adv_f_t"]) + 10 * float(r["cyc"])
        assert abs(float(r["total_f"]) - expected) < 1e-12


def test_train_deterministic(tmp_path, small_config, data_dir):
    for name in ("a", "b"):
        assert _train(small_config, data_dir, tmp_path / name, "--steps", "2") == 0
    assert (tmp_path / "a" / "loss.csv").read_bytes() == (tmp_path / "b" / "loss.csv").read_bytes()


def test_train_missing_data_exits_1(tmp_path, small_config, capsys):
    assert _train(small_config, tmp_path / "nowhere", tmp_path / "run", "--steps", "1") == 1
    assert "error" in capsys.readouterr().err


def test_translate_roundtrip(tmp_path, small_config, data_dir):
    run = tmp_path / "run"
    _train(small_config, data_dir, run, "--steps", "1")
    out = tmp_path / "out"
    assert cli.main(["translate", "--checkpoint", str(run / "final.gait"), "--input-dir", str(data_dir / "S"),
                     "--output-dir", str(out), "--direction", "s2t"]) == 0
    names_in = sorted(p.name for p in (data_dir / "S").glob("*.png"))
    assert sorted(p.name for p in out.glob("*.png")) == names_in
    imgs = ds.load_folder(out, 16)
    assert all(np.all(np.abs(r.pixels) <= 1) for r in imgs)


def test_translate_shape_mismatch_exits_1(tmp_path, small_config, data_dir, capsys):
    run = tmp_path / "run"
    _train(small_config, data_dir, run, "--steps", "1")
    big = tmp_path / "big"
    big.mkdir()
    ds.save_png(np.zeros((1, 32, 32)), big / "x.png")
    assert cli.main(["translate", "--checkpoint", str(run / "final.gait"), "--input-dir", str(big),
                     "--output-dir", str(tmp_path / "o")]) == 1
    assert "does not match" in capsys.readouterr().err


def test_resume_via_cli(tmp_path, small_config, data_dir):
    assert _train(small_config, data_dir, tmp_path / "full", "--steps", "4") == 0
    assert _train(small_config, data_dir, tmp_path / "part", "--steps", "2") == 0
    assert _train(small_config, data_dir, tmp_path / "part", "--steps", "4",
                  "--resume", str(tmp_path / "part" / "final.gait")) == 0
    assert (tmp_path / "full" / "loss.csv").read_bytes() == (tmp_path / "part" / "loss.csv").read_bytes()
    assert load_checkpoint(tmp_path / "full" / "final.gait") == load_checkpoint(tmp_path / "part" / "final.gait")


def _kid(capsys, *args):
    code = cli.main(["eval-kid", *args])
    return code, capsys.readouterr()


def test_eval_kid_deterministic_output(capsys, data_dir):
    capsys.readouterr()  # drop fixture output
    args = ["--real-dir", str(data_dir / "T"), "--fake-dir", str(data_dir / "S"),
            "--block-size", "4", "--n-blocks", "5", "--seed", "3"]
    c1, o1 = _kid(capsys, *args)
    c2, o2 = _kid(capsys, *args)
    assert c1 == c2 == 0 and o1.out == o2.out
    assert o1.out.startswith("KID x100: ") and " +/- " in o1.out


def test_eval_kid_block_too_large(capsys, data_dir):
    code, out = _kid(capsys, "--real-dir", str(data_dir / "T"), "--fake-dir", str(data_dir / "S"),
                     "--block-size", "50")
    assert code == 1 and "block_size" in out.err


def test_gradcheck_command(capsys):
    assert cli.main(["gradcheck", "--instances", "1"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 24


def test_gradcheck_command_fails_with_injected_fault(capsys, monkeypatch):
    from gait import autodiff as ad
    real = ad._conv_weight_grad
    monkeypatch.setattr(ad, "_conv_weight_grad", lambda *a: 1.01 * real(*a))
    assert cli.main(["gradcheck", "--instances", "2"]) == 2
    out = capsys.readouterr().out
    assert "[FAIL] conv2d " in out and "FAILED for: conv2d" in out


def test_console_script_module_entry():
    out = subprocess.run([sys.executable, "-m", "gait.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("make-dataset", "train", "translate", "eval-kid", "gradcheck"):
        assert cmd in out.stdout
