import json
import subprocess
import sys

import pytest

from dpsynth.cli import main


def test_gen_data_and_annotations(tmp_path):
    out, ann = tmp_path / "d.csv", tmp_path / "a.json"
    assert main(["gen-data", "--out", str(out), "--seed", "3", "--annotations", str(ann)]) == 0
    header = out.read_text().splitlines()[0].split(",")
    assert header[-1] == "label" or "label" in header
    assert len(json.loads(ann.read_text())["modules"]) == 3


def test_gen_data_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["gen-data", "--out", str(a), "--seed", "1"])
    main(["gen-data", "--out", str(b), "--seed", "1"])
    assert a.read_bytes() == b.read_bytes()


def _config(tmp_path, **kw):
    cfg = {
        "data": {"planted": "default", "n": 250, "d": 20},
        "models": ["pgm"],
        "epsilons": [2, "inf"],
        "split_seeds": [0],
        "gen_seeds": [0],
    }
    cfg.update(kw)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return p


def test_run_and_report(tmp_path, capsys):
    out = tmp_path / "res"
    trace = tmp_path / "trace.json"
    assert main(["run", "--config", str(_config(tmp_path)), "--out", str(out), "--accountant-trace", str(trace)]) == 0
    assert (out / "report.json").exists() and trace.exists()
    capsys.readouterr()
    assert main(["report", "--out", str(out), "--metrics", "accuracy"]) == 0
    text = capsys.readouterr().out
    assert "accuracy" in text and "pgm" in text


def test_run_config_error_exit_code(tmp_path):
    assert main(["run", "--config", str(_config(tmp_path, models=["unknown"]))]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2


def test_run_failed_cell_exit_code(tmp_path):
    cfg = _config(tmp_path, models=["rongauss"], model_params={"rongauss": {"n_components": 500}})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 1
    assert main(["report", "--out", str(tmp_path / "r")]) == 1


def test_evaluate_and_attack(tmp_path, capsys):
    real = tmp_path / "real.csv"
    main(["gen-data", "--out", str(real), "--seed", "0"])
    other = tmp_path / "other.csv"
    main(["gen-data", "--out", str(other), "--seed", "1"])
    out = tmp_path / "eval.json"
    assert main(["evaluate", "--train", str(real), "--test", str(other), "--synth", str(real), "--out", str(out)]) == 0
    metrics = json.loads(out.read_text())["metrics"]
    assert metrics["overlap_mean"] == 1.0 and metrics["de_tpr"] == 1.0
    capsys.readouterr()
    assert main(["attack", "--synth", str(real), "--members", str(real), "--nonmembers", str(other)]) == 0
    assert json.loads(capsys.readouterr().out)["auc"] == 1.0


def test_missing_input_file(tmp_path):
    code = main(["attack", "--synth", str(tmp_path / "x.csv"), "--members", "a", "--nonmembers", "b"])
    assert code == 2


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "dpsynth.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gen-data" in res.stdout


def test_subcommand_required():
    with pytest.raises(SystemExit):
        main([])
