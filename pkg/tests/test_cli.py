import json
import math

import numpy as np
import pytest

from evostab.cli import EXIT_HYPOTHESIS, EXIT_INVALID_CONFIG, EXIT_NUMERIC, EXIT_OK, load_config, main
from evostab.lp_spaces import SampledSignal

LINEAR = """
seed = 1
[grid]
T = 5.0
dt = 0.01
[model]
kind = "closed_form_linear"
nu = 1.0
[admissibility]
p = 2
q = 2
n_test_pairs = 8
"""


def write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(tmp_path, text, command, *extra):
    out = tmp_path / "out"
    code = main(["--config", write(tmp_path, text), "--command", command, "--out", str(out), *extra])
    return code, out


def test_simulate_linear_matches_exponential(tmp_path):
    code, out = run(tmp_path, LINEAR, "simulate")
    assert code == EXIT_OK
    sig = SampledSignal.from_csv((out / "trajectory.csv").read_text())
    np.testing.assert_allclose(sig.values, np.exp(-sig.times), atol=1e-4)
    manifest = json.loads((out / "manifest.json").read_text())
    assert "timestamp" in manifest and "wall_time_s" in manifest
    report = json.loads((out / "simulate.json").read_text())
    assert report["config_hash"] == manifest["config_hash"]
    assert "timestamp" not in report


def test_simulate_spectral_mode_one(tmp_path):
    cfg = '[grid]\nT = 2.0\ndt = 0.01\n[model]\nkind = "spectral_heat"\nn_modes = 6\n[simulate]\nmode = 1\n'
    code, out = run(tmp_path, cfg, "simulate")
    assert code == EXIT_OK
    sig = SampledSignal.from_csv((out / "trajectory.csv").read_text())
    np.testing.assert_allclose(sig.values[:, 1], np.exp(-sig.times), rtol=1e-12)
    assert np.all(np.delete(sig.values, 1, axis=1) == 0)
    assert (out / "trajectory_values.csv").exists()


def test_simulate_forced_model_residual(tmp_path):
    cfg = '[grid]\nT = 3.0\ndt = 0.01\n[model]\nkind = "scalar_forced"\n[simulate]\nx0 = 0.0\n'
    code, out = run(tmp_path, cfg, "simulate")
    assert code == EXIT_OK
    assert json.loads((out / "simulate.json").read_text())["result"]["residual"] <= 1e-12


@pytest.mark.parametrize("bad", ["dt = -0.01", "dt = 0.0", "dt = 50.0"])
def test_invalid_grid_exit_code(tmp_path, bad, capsys):
    code, _ = run(tmp_path, LINEAR.replace("dt = 0.01", bad), "simulate")
    assert code == EXIT_INVALID_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "invalid-config"
    assert "grid.dt" in err["message"] and "run.toml:5" in err["message"]


def test_unparseable_config(tmp_path, capsys):
    code, _ = run(tmp_path, "[grid\nT = 1", "simulate")
    assert code == EXIT_INVALID_CONFIG
    assert "line" in json.loads(capsys.readouterr().err)["message"]


def test_unknown_model_kind(tmp_path):
    code, _ = run(tmp_path, LINEAR.replace("closed_form_linear", "fem"), "simulate")
    assert code == EXIT_INVALID_CONFIG


def test_green_zero_signal(tmp_path):
    code, out = run(tmp_path, LINEAR + '[green]\nsignal = "zero"\n', "green")
    assert code == EXIT_OK
    sig = SampledSignal.from_csv((out / "green.csv").read_text())
    assert np.all(sig.values == 0)


def test_green_box_signal(tmp_path):
    text = LINEAR.replace("dt = 0.01", "dt = 0.001") + "[green]\nsignal = { kind = \"indicator\", a = 0.0, b = 1.0 }\n"
    code, out = run(tmp_path, text, "green")
    assert code == EXIT_OK
    sig = SampledSignal.from_csv((out / "green.csv").read_text())
    t = sig.times
    ref = np.where(t <= 1, 1 - np.exp(-t), (math.e - 1) * np.exp(-t))
    assert np.abs(sig.values - ref).max() <= 2e-3


def test_admissibility_then_certify(tmp_path):
    code, out = run(tmp_path, LINEAR, "admissibility")
    assert code == EXIT_OK
    code, _ = run(tmp_path, LINEAR, "certify")
    assert code == EXIT_OK
    cert = json.loads((out / "certify.json").read_text())["result"]
    assert cert["certificate"]["provenance"] == "theoretical"
    assert cert["verification"]["violations"] == 0
    assert cert["certificate"]["nu"] <= 1.0
    assert len(cert["trace"]) == 5


def test_certify_requires_prior_admissibility(tmp_path, capsys):
    code, _ = run(tmp_path, LINEAR, "certify")
    assert code == EXIT_INVALID_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "missing-prerequisite"
    assert err["requires"] == "admissibility"
    assert "--command admissibility" in err["message"]


def test_certify_excluded_pair(tmp_path, capsys):
    code, _ = run(tmp_path, LINEAR + '[certify]\nK = 1.0\np = 1\nq = "inf"\n', "certify")
    assert code == EXIT_HYPOTHESIS
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "hypothesis-violation"
    assert err["excluded_pair"] == ["1", "inf"]


def test_classify(tmp_path):
    code, out = run(tmp_path, LINEAR.replace("T = 5.0", "T = 20.0"), "classify")
    assert code == EXIT_OK
    res = json.loads((out / "classify.json").read_text())["result"]
    assert res["uniformly_exponentially_stable"] and res["asymptotic_tail_check"]


def test_reports_are_byte_identical(tmp_path):
    runs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert main(["--config", write(tmp_path, LINEAR), "--command", "admissibility", "--out", str(out)]) == 0
        runs.append((out / "admissibility.json").read_bytes())
    assert runs[0] == runs[1]


def test_seed_flag_changes_hash(tmp_path):
    path = write(tmp_path, LINEAR)
    a = load_config(path).hash()
    main(["--config", path, "--command", "simulate", "--out", str(tmp_path / "s"), "--seed", "9"])
    b = json.loads((tmp_path / "s" / "simulate.json").read_text())["config_hash"]
    assert a != b


def test_json_config_matches_toml(tmp_path):
    data = {"seed": 1, "grid": {"T": 5.0, "dt": 0.01}, "model": {"kind": "closed_form_linear", "nu": 1.0},
            "admissibility": {"p": 2, "q": 2, "n_test_pairs": 8}}
    js = write(tmp_path, json.dumps(data), "run.json")
    assert load_config(js).hash() == load_config(write(tmp_path, LINEAR)).hash()


def test_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("EVOSTAB_OUT", str(tmp_path / "env_out"))
    monkeypatch.setenv("EVOSTAB_THREADS", "3")
    assert main(["--config", write(tmp_path, LINEAR), "--command", "admissibility"]) == 0
    assert (tmp_path / "env_out" / "admissibility.json").exists()


def test_sorted_keys(tmp_path):
    code, out = run(tmp_path, LINEAR, "admissibility")
    text = (out / "admissibility.json").read_text()
    top = list(json.loads(text).keys())
    assert top == sorted(top)


def test_reproduce_extraction(tmp_path):
    code = main(["--command", "reproduce", "--example", "extraction", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert "PASS" in (tmp_path / "reproduce_extraction.txt").read_text()


def test_reproduce_scalar_flow_table(tmp_path):
    code = main(["--command", "reproduce", "--example", "scalar-flow", "--out", str(tmp_path)])
    rows = json.loads((tmp_path / "reproduce_scalar-flow.json").read_text())["rows"]
    by_name = {r["name"]: r["passed"] for r in rows}
    assert all(v for k, v in by_name.items() if "[1/2, 2]" in k or "cocycle" in k)
    # the stated upper bound 1 only survives for constant h
    assert by_name["sandwich [1/2, 1] (constant)"]
    assert code == (EXIT_OK if all(by_name.values()) else EXIT_NUMERIC)


def test_missing_command(tmp_path):
    assert main(["--config", write(tmp_path, LINEAR)]) == EXIT_INVALID_CONFIG
