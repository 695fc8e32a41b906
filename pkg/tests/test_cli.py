import json

import pytest

from podsim import cli
from podsim._io import read_csv

SIM = {"n": 50, "b": 4, "gamma": 0.3, "m": 1, "seed": 3}
SMALL = {"n": 3, "b": 2, "lambda": 2.0, "d": 2, "seed": 1}
ODE = {"n": 100, "b": 6, "lambda": 90.0, "d": 2}
REGIME = {"n": 10000, "gamma": 0.3, "m": 2}
SCAN = {"n": 1000, "b": 6, "gamma": 0.3, "m": 2, "seed": 0}

CASES = [
    ("simulate", SIM, ["--events", "40000", "--reps", "2", "--jobs", "1"], ["trajectory.csv", "estimate.json", "verdict.json"]),
    ("exact", SMALL, [], ["stationary.json"]),
    ("ode", ODE, ["--time", "20", "--points", "11"], ["ode.csv"]),
    ("fixedpoint", ODE, [], ["fixedpoint.json"]),
    ("regime", REGIME, [], ["regime.json"]),
    ("bounds", {"n": 10000, "b": 4, "gamma": 0.3, "m": 2}, [], ["bands.json"]),
    ("driftscan", SCAN, ["--family", "Lower_W", "--index", "l=1", "--index", "k=2", "--scan-budget", "200"], ["driftscan.json"]),
    ("taylor", {"d_max": 1000, "n_max": 1e6}, [], ["taylor.csv", "taylor.json"]),
    ("sweep", {"n": 10**12, "gamma": 0.3}, ["--points", "5"], ["sweep.csv"]),
]


def write_config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def run_case(tmp_path, command, data, extra, out_name="out"):
    out = tmp_path / out_name
    code = cli.main([command, "--config", write_config(tmp_path, data), "--out", str(out), *extra])
    return code, out


@pytest.mark.parametrize("command,data,extra,files", CASES, ids=[c[0] for c in CASES])
def test_command_writes_outputs(tmp_path, command, data, extra, files):
    code, out = run_case(tmp_path, command, data, extra)
    assert code == 0
    assert sorted(p.name for p in out.iterdir()) == sorted(files + ["run_info.json"])
    for name in files:
        text = (out / name).read_text()
        if name.endswith(".json"):
            payload = json.loads(text)
            assert payload["metadata"]["command"] == command
            assert "version" in payload["metadata"]
        else:
            assert text.startswith("# ")
            assert read_csv(out / name)


@pytest.mark.parametrize("command,data,extra,files", CASES, ids=[c[0] for c in CASES])
def test_outputs_are_reproducible(tmp_path, command, data, extra, files):
    _, a = run_case(tmp_path, command, data, extra, "a")
    _, b = run_case(tmp_path, command, data, extra, "b")
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_simulate_outputs_content(tmp_path):
    code, out = run_case(tmp_path, "simulate", SIM, ["--events", "40000"])
    assert code == 0
    est = json.loads((out / "estimate.json").read_text())
    assert len(est["pooled"]["means"]) == 4
    verdict = json.loads((out / "verdict.json").read_text())
    assert verdict["available"] and 0 <= verdict["containment"]["joint"] <= 1
    rows = read_csv(out / "trajectory.csv")
    assert set(rows[0]) == {"rep", "chunk", "t", "events", "s_1", "s_2", "s_3", "s_4"}


def test_simulate_without_bands(tmp_path):
    code, out = run_case(tmp_path, "simulate", SMALL, ["--events", "20000"])
    assert code == 0
    assert json.loads((out / "verdict.json").read_text())["available"] is False


def test_seed_override_changes_output(tmp_path):
    _, a = run_case(tmp_path, "simulate", SIM, ["--events", "20000"], "a")
    _, b = run_case(tmp_path, "simulate", SIM, ["--events", "20000", "--seed", "99"], "b")
    assert (a / "estimate.json").read_bytes() != (b / "estimate.json").read_bytes()


def test_missing_config_exits_2_without_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["exact", "--config", str(tmp_path / "nope.json"), "--out", str(out)])
    assert code == 2
    assert not out.exists()
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 2 and err["error"] == "ConfigError"


def test_invalid_config_values_exit_2(tmp_path):
    for bad in ({"n": 3, "b": 2, "lambda": 5.0, "d": 2}, {"n": 3, "b": 2, "lambda": 2.0, "d": 2, "x": 1}):
        code, out = run_case(tmp_path, "exact", bad, [])
        assert code == 2 and not out.exists()


def test_state_space_too_large_exits_2(tmp_path):
    code, out = run_case(tmp_path, "exact", {"n": 100, "b": 12, "lambda": 90.0, "d": 2}, ["--max-states", "1000"])
    assert code == 2 and not out.exists()


def test_no_root_exits_3(tmp_path):
    code, out = run_case(tmp_path, "regime", {"n": 8, "gamma": 0.1, "m": 1}, [])
    assert code == 3 and not out.exists()


def test_usage_error_exits_2(tmp_path):
    assert cli.main(["simulate"]) == 2
    assert cli.main(["nonsense"]) == 2
    code, _ = run_case(tmp_path, "driftscan", SCAN, ["--index", "k"])
    assert code == 2


def test_out_dir_from_environment(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv(cli.OUT_ENV, str(target))
    assert cli.main(["regime", "--config", write_config(tmp_path, REGIME)]) == 0
    assert (target / "regime.json").exists()


def test_out_path_is_a_file(tmp_path):
    f = tmp_path / "file"
    f.write_text("x")
    code = cli.main(["regime", "--config", write_config(tmp_path, REGIME), "--out", str(f)])
    assert code == 2


def test_run_info(tmp_path):
    _, out = run_case(tmp_path, "regime", REGIME, [])
    info = json.loads((out / "run_info.json").read_text())
    assert info["outputs"] == ["regime.json"] and info["command"] == "regime"


def test_regime_output_values(tmp_path):
    _, out = run_case(tmp_path, "regime", REGIME, [])
    payload = json.loads((out / "regime.json").read_text())
    assert payload["d_real"] == pytest.approx(12.691994948065744, rel=1e-12)
    assert payload["regime_class"] == "finite_delay"


def test_version_flag():
    assert cli.main(["--version"]) == 0
