import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import pytest

from approx.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, main
from approx.experiments import (EXPERIMENTS, ConfigError, ExperimentConfig, run_experiment,
                                verify_manifest)
from approx.svg import line_chart


def test_defaults_exist_for_every_experiment():
    for name in EXPERIMENTS:
        cfg = ExperimentConfig.defaults(name)
        assert cfg.experiment == name
    assert ExperimentConfig.defaults("lp-bound").nu == 0.05
    assert ExperimentConfig.defaults("tiling-study").field == "ring"


@pytest.mark.parametrize("suffix", [".toml", ".json"])
def test_config_roundtrip(tmp_path, suffix):
    cfg = ExperimentConfig.from_dict(dict(experiment="bistable-sweep", seed=11, n=500,
                                          nus=[0.0, 0.05], field_params={"freq": 3.0}))
    path = tmp_path / f"cfg{suffix}"
    cfg.save(path)
    assert ExperimentConfig.load(path) == cfg
    assert ExperimentConfig.load(path, "bistable-sweep") == cfg


@pytest.mark.parametrize("data", [
    dict(experiment="bistable-sweep", bogus=1),
    dict(experiment="no-such-thing"),
    dict(experiment="lp-bound", n=10),
    dict(experiment="lp-bound", delta=1.5),
    dict(experiment="fit-and-verify", centers=[6, 8], widths=[0.5]),
    dict(experiment="tiling-study", ks=[1]),
    dict(experiment="lp-bound", field="lorenz"),
    dict(seed=3),
])
def test_config_rejections(data):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(data)


def test_config_experiment_mismatch(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(dict(experiment="lp-bound")))
    with pytest.raises(ConfigError):
        ExperimentConfig.load(p, "drift-demo")
    p.write_text("not = [valid")
    p2 = tmp_path / "c.toml"
    p2.write_text("n = [")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(p2)
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.toml")


def _small_lp(tmp_path):
    cfg_path = tmp_path / "lp.toml"
    ExperimentConfig.from_dict(dict(experiment="lp-bound", n=400, out=str(tmp_path / "out"))).save(cfg_path)
    return cfg_path


def test_run_and_verify_manifest(tmp_path):
    cfg = ExperimentConfig.load(_small_lp(tmp_path))
    man, outcome = run_experiment(cfg, tmp_path / "out")
    assert outcome.passed
    assert {o["path"] for o in man.outputs} == {"samples.csv", "report.json"}
    assert all(o["schema"] or o["path"].endswith(".json") for o in man.outputs)
    assert verify_manifest(tmp_path / "out" / "manifest.json") == []
    assert (tmp_path / "out" / "config.toml").exists()
    assert not (tmp_path / "out" / "failures.json").exists()
    (tmp_path / "out" / "samples.csv").write_text("tampered\n")
    assert verify_manifest(tmp_path / "out" / "manifest.json") == ["samples.csv"]


def test_cli_exit_codes(tmp_path, capsys):
    cfg_path = _small_lp(tmp_path)
    out = tmp_path / "cli-out"
    assert main(["run", "lp-bound", "--config", str(cfg_path), "--out", str(out), "--seed", "2"]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out
    assert json.loads((out / "manifest.json").read_text())["config"]["seed"] == 2
    assert main(["verify", str(out / "manifest.json")]) == EXIT_OK
    (out / "report.json").write_text("{}")
    assert main(["verify", str(out / "manifest.json")]) == EXIT_FAIL
    assert main(["verify", str(tmp_path / "nope.json")]) == EXIT_CONFIG
    assert main(["run", "lp-bound", "--config", str(tmp_path / "nope.toml")]) == EXIT_CONFIG
    assert main(["run", "lp-bound", "--jobs", "0"]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        main(["run", "no-such-experiment"])
    assert info.value.code == EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == EXIT_CONFIG


def test_failed_check_writes_failure_record(tmp_path):
    # a delta too small to certify makes the bound check fail -> exit 2
    cfg_path = tmp_path / "c.toml"
    ExperimentConfig.from_dict(dict(experiment="lp-bound", n=400, eps=1e-4, delta=1e-3)).save(cfg_path)
    out = tmp_path / "o"
    assert main(["run", "lp-bound", "--config", str(cfg_path), "--out", str(out)]) == EXIT_FAIL
    failed = json.loads((out / "failures.json").read_text())["failed"]
    assert "(eps, delta) certified" in failed


def test_jobs_env(tmp_path, monkeypatch):
    monkeypatch.setenv("APPROX_JOBS", "many")
    assert main(["run", "lp-bound", "--config", str(_small_lp(tmp_path))]) == EXIT_CONFIG


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "approx.cli", "verify", str(tmp_path / "x.json")],
                       capture_output=True, text=True)
    assert r.returncode == EXIT_CONFIG


def test_svg_is_well_formed():
    text = line_chart([("a & b", [0, 1, 2], [0.0, 1.0, 4.0]), ("c", [0, 2], [1.0, 1.0])],
                      "t<1>", "x", "y")
    root = ET.fromstring(text)
    assert root.tag.endswith("svg")
    assert text.count("<polyline") == 2
    ET.fromstring(line_chart([("flat", [1, 1], [2, 2])]))
