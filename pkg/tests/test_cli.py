import filecmp
import json
import subprocess
import sys

import numpy as np
import pytest

from pnfc.cli import main
from pnfc.imgio import FrameStack, Image, read_pgm, save_stack, write_pgm


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    values = dict(line.split("=", 1) for line in out.out.splitlines() if "=" in line)
    return code, values, out.err


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(same_tree(a / d, b / d) for d in cmp.common_dirs)


def test_eval_identical(tmp_path, capsys, scene32):
    write_pgm(scene32, tmp_path / "a.pgm")
    code, values, _ = run(capsys, "eval", "--a", tmp_path / "a.pgm", "--b", tmp_path / "a.pgm")
    assert code == 0
    assert values == {"psnr_db": "99.0", "ssim": "1.0"}


def test_derain_two_frames_is_usage_error(tmp_path, capsys):
    manifest = save_stack(FrameStack(np.ones((2, 4, 4)), 20.0, 33.0, seed=0), tmp_path / "s")
    code, _, err = run(capsys, "derain", "--stack", manifest, "--out", tmp_path / "o.pgm")
    assert code == 2
    assert "N >= 3" in err and "usage:" in err
    assert not (tmp_path / "o.pgm").exists()


def test_synth_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        code, _, _ = run(capsys, "synth", "--out", tmp_path / d, "--frames", 4, "--seed", 2,
                         "--trace")
        assert code == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")


def test_synth_then_derain(tmp_path, capsys):
    clean = Image(np.full((16, 16), 100.0), 255)
    write_pgm(clean, tmp_path / "clean.pgm")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"rain": {"drops_per_frame": 0.0, "fog_mu_mean": 1.0,
                                        "fog_mu_jitter": 0.0}, "photon_noise": False}))
    code, values, _ = run(capsys, "synth", "--clean", tmp_path / "clean.pgm", "--config", cfg,
                          "--out", tmp_path / "s", "--frames", 5, "--T", 20)
    assert code == 0 and values["frames"] == "5"
    manifest = json.loads((tmp_path / "s/manifest.json").read_text())
    assert manifest["measurement_interval_ms"] == 33.0
    code, values, _ = run(capsys, "derain", "--stack", tmp_path / "s/manifest.json",
                          "--normalize", "--out", tmp_path / "r.pgm")
    assert code == 0 and values["estimator"] == "pnfc"
    assert (read_pgm(tmp_path / "r.pgm").data == 100.0).all()


def test_verify_stats_exit_codes(tmp_path, capsys):
    run(capsys, "synth", "--out", tmp_path / "s", "--frames", 30, "--trace")
    code, values, _ = run(capsys, "verify-stats", "--stack", tmp_path / "s/manifest.json",
                          "--trace", tmp_path / "s/trace", "--out", tmp_path / "v.csv")
    assert code == 0 and values["passed"] == "true"
    assert (tmp_path / "v.csv").read_text().startswith("scope,block_row,block_col")

    cfg = tmp_path / "corr.json"
    cfg.write_text(json.dumps({"coherence_time_ms": 330.0}))
    run(capsys, "synth", "--out", tmp_path / "c", "--frames", 300, "--config", cfg, "--trace")
    code, values, _ = run(capsys, "verify-stats", "--stack", tmp_path / "c/manifest.json",
                          "--trace", tmp_path / "c/trace")
    assert code == 1
    assert values["passed"] == "false" and values["correlated_regime"] == "true"


def test_derain_threads_do_not_change_output(tmp_path, capsys):
    run(capsys, "synth", "--out", tmp_path / "s", "--frames", 6)
    for t in (1, 4):
        code, _, _ = run(capsys, "derain", "--stack", tmp_path / "s/manifest.json",
                         "--threads", t, "--out", tmp_path / f"r{t}.pgm")
        assert code == 0
    assert (tmp_path / "r1.pgm").read_bytes() == (tmp_path / "r4.pgm").read_bytes()


def test_sweep_and_demo(tmp_path, capsys):
    code, values, _ = run(capsys, "sweep", "--out", tmp_path / "sw", "--frames", 4, "--seeds", 0,
                          "--T", 20, 50)
    assert code == 0 and values["rows"] == "6"
    assert "psnr_db.pnfc.T20" in values and "inflection_T_pnfc_median" in values
    code, values, _ = run(capsys, "demo-fluctuation", "--out", tmp_path / "fl", "--frames", 4)
    assert code == 0 and set(values) == {"mean_interframe_psnr_db.T20",
                                         "mean_interframe_psnr_db.T50"}


@pytest.mark.parametrize("argv", [
    ["synth", "--out", "x", "--frames", "1"],
    ["derain", "--stack", "missing.json", "--out", "x.pgm"],
    ["eval", "--a", "missing.pgm", "--b", "missing.pgm"],
    ["synth", "--out", "x", "--threads", "0"],
])
def test_argument_errors(tmp_path, capsys, monkeypatch, argv):
    monkeypatch.chdir(tmp_path)
    code, _, err = run(capsys, *argv)
    assert code == 2 and "usage:" in err


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["paint"])
    assert exc.value.code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "pnfc", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "demo-fluctuation" in proc.stdout
