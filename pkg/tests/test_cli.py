import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from tlmn.cli import build_parser, main

SUBCOMMANDS = ("fetch", "synth", "features", "train", "evaluate", "predict", "clearsky", "audit")


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tlmn", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for name in SUBCOMMANDS:
        assert name in proc.stdout


@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_subcommand_help(name, capsys):
    with pytest.raises(SystemExit) as info:
        main([name, "--help"])
    assert info.value.code == 0
    assert "usage: tlmn " + name in capsys.readouterr().out


def test_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["clearsky", "--lat", "abc"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2


def test_runtime_error_exit_1(tmp_path, capsys):
    code, _, err = run(["evaluate", "--data", str(tmp_path / "none.csv"), "--checkpoint", str(tmp_path / "m")], capsys)
    assert code == 1
    assert err.strip().startswith("error: CheckpointError:")
    assert len(err.strip().splitlines()) == 1


def test_missing_path_is_config_error(capsys):
    code, _, err = run(["train"], capsys)
    assert code == 1 and "error: ConfigError: no data path" in err


def test_clearsky_table(capsys):
    code, out, _ = run(["clearsky", "--lat", "15.65", "--lon", "32.48", "--alt", "380", "--date", "2022-06-21"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 24 and [int(r["local_hour"]) for r in rows] == list(range(24))
    assert rows[0]["utc_start"] == "2022-06-20T22:00:00Z"
    ghi = np.array([float(r["ghi_clear"]) for r in rows])
    zen = np.array([float(r["zenith_deg"]) for r in rows])
    assert np.all(ghi[:4] == 0.0) and np.all(ghi[21:] == 0.0)
    assert 900 < ghi.max() < 1100 and zen.min() < 15


def test_audit_fresh(capsys):
    code, out, _ = run(["audit", "--seed", "3"], capsys)
    assert code == 0
    assert "63,745" in out and "deviation +0.45%" in out
    assert [line.split()[0] for line in out.splitlines() if line.startswith(("PASS", "FAIL"))] == ["PASS"] * 3


def test_parser_defaults():
    args = build_parser().parse_args(["synth"])
    assert (args.years, args.start_year, args.steps, args.out) == (3, 2021, 20, "synthetic.csv")


def pipeline(workdir, capsys, monkeypatch):
    """synth -> train -> evaluate with relative paths inside ``workdir``."""
    monkeypatch.chdir(workdir)
    assert run(["-q", "synth", "--years", "2", "--seed", "7", "--steps", "5", "--out", "data.csv",
                "--config-out", "run.json"], capsys)[0] == 0  # fmt: skip
    cfg = json.loads((workdir / "run.json").read_text())
    assert cfg["split"] == {"train_range": [2021, 2021], "test_range": [2022, 2022]}
    cfg["model"].update(channels=8, head_hidden=8, embed_k=3)
    (workdir / "run.json").write_text(json.dumps(cfg))
    code, out, err = run(["-q", "train", "--config", "run.json", "--checkpoint", "m.ckpt", "--max-epochs", "2"], capsys)
    assert code == 0, err
    assert "trained 2 epochs" in out
    code, out, err = run(["-q", "evaluate", "--config", "run.json", "--checkpoint", "m.ckpt", "--report-dir", "rep"], capsys)
    assert code == 0, err
    assert "night noise: 0 violating hours" in out
    return json.loads((workdir / "rep" / "report.json").read_text())


@pytest.mark.slow
def test_synth_train_evaluate_deterministic(tmp_path, capsys, monkeypatch):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    first = pipeline(tmp_path / "a", capsys, monkeypatch)
    second = pipeline(tmp_path / "b", capsys, monkeypatch)
    assert first["night_noise"]["violating_hours"] == 0
    assert first["metrics"]["daylight"]["n"] > 3000
    # the last two UTC hours of the test year already fall on local new year
    assert [(r["year"], r["hours"]) for r in first["yearly_rmse"]][1] == (2023, 2)
    first.pop("generated_at")
    second.pop("generated_at")
    assert json.dumps(first, sort_keys=True) == json.dumps(second, sort_keys=True)

    work = tmp_path / "a"
    monkeypatch.chdir(work)
    with open("data.csv") as fh:
        lines = fh.readlines()
    (work / "window.csv").write_text("".join([lines[0]] + lines[-30:]))
    code, out, err = run(["predict", "--checkpoint", "m.ckpt", "--window", "window.csv"], capsys)
    assert code == 0, err
    doc = json.loads(out)
    assert doc["target_time"] == "2023-01-01T00:00:00Z"
    assert 0.0 <= doc["ghi_pred"] <= doc["upper_bound"]
    assert doc["ghi_clear"] == 0.0 and doc["ghi_pred"] == 0.0

    code, out, _ = run(["features", "--config", "run.json", "--checkpoint", "m.ckpt", "--out", "f.csv"], capsys)
    assert code == 0 and "normalized" in out
    with open("f.csv") as fh:
        assert len(fh.readlines()) == 2 * 8760 + 1

    code, out, _ = run(["audit", "--checkpoint", "m.ckpt"], capsys)
    assert code == 0 and out.count("PASS") == 3


def test_predict_short_window(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    run(["-q", "synth", "--years", "1", "--out", "d.csv"], capsys)
    from tlmn.checkpoint import save_checkpoint
    from tlmn.network import init_state

    from helpers import some_norm_stats

    state = init_state(seed=0)
    state.norm_stats = some_norm_stats()
    save_checkpoint(state, "m.ckpt")
    lines = open("d.csv").readlines()
    (tmp_path / "w.csv").write_text("".join([lines[0]] + lines[-10:]))
    code, _, err = run(["predict", "--checkpoint", "m.ckpt", "--window", "w.csv"], capsys)
    assert code == 1 and err.startswith("error: DataError:")
