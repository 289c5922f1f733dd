import json

import pytest

from coplan.cli import main
from coplan.mockserver import MockSettings, start_background
from coplan.sft import load_jsonl


@pytest.fixture
def scenario_dir(tmp_path):
    out = tmp_path / "scen"
    assert main(["generate", "--profile", "suite", "--count", "6", "--seed", "3", "--out", str(out)]) == 0
    return out


def test_generate_single_profile(tmp_path):
    out = tmp_path / "one"
    assert main(["generate", "--profile", "highway/clear/noon/2", "--seed", "4", "--out", str(out)]) == 0
    files = list(out.glob("*.json"))
    assert [f.name for f in files] == ["highway-clear-noon-0004.json"]
    assert len(json.loads(files[0].read_text())["agents"]) == 3


def test_run_eval_plot(scenario_dir, tmp_path, capsys):
    runs = tmp_path / "runs"
    assert main(["run", "--scenario", str(scenario_dir), "--backend", "geometric", "--out", str(runs)]) == 0
    run_files = sorted(runs.glob("*.json"))
    assert len(run_files) == 6
    report = tmp_path / "report.json"
    assert main(["eval", "--runs", str(runs), "--report", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert doc["n"] == 6 and doc["crr"] == 1.0
    assert report.with_suffix(".csv").exists()
    png = tmp_path / "plot.pgm"
    assert main(["plot", "--run", str(run_files[0]), "--out", str(png)]) == 0
    assert png.read_bytes().startswith(b"P5")
    assert "crr=1.000" in capsys.readouterr().out


def test_run_single_file_with_config(scenario_dir, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("backend = 'geometric'\nclamp_max_step = 10.0\n")
    src = sorted(scenario_dir.glob("*.json"))[0]
    out = tmp_path / "r.json"
    assert main(["run", "--scenario", str(src), "--config", str(cfg), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["backend"] == "geometric"


def test_run_remote_against_mock(scenario_dir, tmp_path):
    server, url = start_background(MockSettings("short"))
    try:
        src = sorted(scenario_dir.glob("*.json"))[0]
        out = tmp_path / "r.json"
        assert main(["run", "--scenario", str(src), "--backend", "remote", "--endpoint", url, "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["fallback"] is True and doc["optimized"] == [p[1:] for p in doc["nominal"]]
    finally:
        server.shutdown()
        server.server_close()


def test_export_sft(scenario_dir, tmp_path):
    out = tmp_path / "sft.jsonl"
    assert main(["export-sft", "--scenarios", str(scenario_dir), "--out", str(out)]) == 0
    assert len(load_jsonl(out)) == 6


def test_bench(scenario_dir, capsys):
    src = sorted(scenario_dir.glob("*.json"))[0]
    assert main(["bench", "--scenario", str(src), "--reps", "3", "--json"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["reps"] == 3 and stats["backend"] == "geometric"


def test_empty_inputs(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["eval", "--runs", str(tmp_path / "empty"), "--report", str(tmp_path / "r.json")]) == 1
    assert main(["run", "--scenario", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) == 1


def test_bad_arguments():
    with pytest.raises(SystemExit):
        main(["run", "--scenario", "x", "--backend", "magic", "--out", "y"])
