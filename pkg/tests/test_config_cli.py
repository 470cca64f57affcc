import json
import subprocess
import sys

import pytest

from activeqkd import ConfigError, RunConfig, load, preset, validate
from activeqkd.cli import main
from activeqkd.config import PRESETS, dump, from_dict


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def violations(data):
    with pytest.raises(ConfigError) as exc:
        from_dict(data)
    return exc.value.violations


def test_defaults_are_valid():
    assert validate(RunConfig()) == []


@pytest.mark.parametrize("name", PRESETS)
def test_presets_load(name):
    cfg = preset(name)
    assert validate(cfg) == []
    assert load(f"preset:{name}") == cfg
    assert from_dict(json.loads(dump(cfg))) == cfg


def test_preset_values():
    assert preset("paper_1mhz").clock_hz == 1_000_000
    assert preset("accelerated_drift").channel.drift_bias_deg_per_s > 0
    nf = preset("noise_free")
    assert nf.interferometer.visibility == 1.0 and not nf.controller.enabled


@pytest.mark.parametrize("data, path", [
    ({"interferometer": {"visibility": 1.2}}, "interferometer.visibility"),
    ({"channel": {"loss_db": -1.0}}, "channel.loss_db"),
    ({"channel": {"bogus": 1}}, "channel.bogus"),
    ({"clock_hz": "fast"}, "clock_hz"),
    ({"controller": {"enabled": 1}}, "controller.enabled"),
    ({"transport": "udp:x:1"}, "transport"),
    ({"detectors": {"apd0": {"afterpulse_prob": 0.9}}}, "detectors.apd0.afterpulse_prob"),
])
def test_violation_paths(data, path):
    assert any(v.startswith(path + ":") for v in violations(data))


def test_all_violations_reported():
    v = violations({"interferometer": {"visibility": 1.2}, "channel": {"loss_db": -1.0}, "duration_s": 0})
    assert len(v) == 3


def test_file_with_preset_key(tmp_path):
    cfg = load(write(tmp_path, {"preset": "paper_1mhz", "seed": 7}))
    assert cfg.clock_hz == 1_000_000 and cfg.seed == 7


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(ConfigError):
        load(p)


def test_replace_dotted():
    cfg = RunConfig().replace(**{"channel.loss_db": 3.0})
    assert cfg.channel.loss_db == 3.0
    with pytest.raises(ConfigError):
        RunConfig().replace(**{"channel.loss_db": -3.0})


# -- CLI --------------------------------------------------------------------------

def test_validate_exit_codes(tmp_path, capsys):
    assert main(["validate", "--config", write(tmp_path, {"seed": 3})]) == 0
    assert main(["validate", "--config", write(tmp_path, {"interferometer": {"visibility": 1.2}})]) == 2
    err = capsys.readouterr().err
    assert "interferometer.visibility" in err
    assert main(["validate", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["validate", "--config", "preset:nope"]) == 2


def test_run_bad_override(tmp_path):
    assert main(["run", "--config", "preset:noise_free", "--out", str(tmp_path), "--duration", "-1"]) == 2


def test_run_unreachable_transport(tmp_path):
    rc = main(["run", "--config", "preset:noise_free", "--out", str(tmp_path / "o"), "--duration", "1",
               "--transport", "tcp:no-such-host.invalid:9"])
    assert rc == 3


def test_analyze_missing_dir(tmp_path):
    assert main(["analyze", "--out", str(tmp_path / "nothing")]) == 2


def test_noise_free_run_and_analyze(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", "--config", "preset:noise_free", "--out", str(out), "--duration", "1"]) == 0
    ran = json.loads(capsys.readouterr().out)
    assert ran["mean_qber"] == 0.0
    assert ran["duty_cycle"] == pytest.approx(1.0, abs=0.05)
    assert main(["analyze", "--out", str(out)]) == 0
    assert json.loads(capsys.readouterr().out) == ran


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "activeqkd", "validate", "--config", "preset:paper_defaults"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("ok")
