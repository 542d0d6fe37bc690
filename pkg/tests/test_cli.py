import json
import subprocess
import sys

import numpy as np
import pytest

from mfsampler import io
from mfsampler.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, run
from mfsampler.config import SEED_ENV, ConfigError, parse_config
from mfsampler.plotting import read_svg_data


def write_config(tmp_path, body, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(body, indent=2))
    return str(path)


BASE = {
    "schema_version": 1,
    "seed": 11,
    "kalman": {"n_particles": 40, "step_size": 0.05},
    "boltzmann": {"potential": "quadratic_1d", "n_particles": 60, "horizon": 0.5,
                  "n_snapshots": 5},
}


def test_validate_ok(tmp_path, capsys):
    assert run(["validate", "--config", write_config(tmp_path, BASE)]) == EXIT_OK
    assert "ok" in capsys.readouterr().out


def test_validate_infeasible_energy_condition(tmp_path, capsys):
    body = {"schema_version": 1,
            "boltzmann": {"potential": "doublewell_1d", "box_half_width": 2.0}}
    assert run(["validate", "--config", write_config(tmp_path, body)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "energy condition" in err
    assert "line " in err


def test_unknown_key_reports_line(tmp_path, capsys):
    body = dict(BASE, boltzmann={"potential": "quadratic_1d", "horizn": 1.0})
    assert run(["validate", "--config", write_config(tmp_path, body)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    text = (tmp_path / "cfg.json").read_text().splitlines()
    line = next(k for k, s in enumerate(text, 1) if '"horizn"' in s)
    assert f"line {line}:" in err and "horizn" in err


def test_malformed_json_and_schema(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "schema_version": 1,\n  "seed": ,\n}\n')
    with pytest.raises(ConfigError, match="line 3"):
        parse_config(bad.read_text())
    assert run(["validate", "--config", str(bad)]) == EXIT_CONFIG
    assert run(["validate", "--config", write_config(tmp_path, {"schema_version": 9})]) == EXIT_CONFIG
    assert run(["validate", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG


def test_usage_errors_exit_2():
    assert run(["sample", "--method", "mcmc", "--config", "x", "--out", "y"]) == EXIT_CONFIG
    assert run([]) == EXIT_CONFIG


def test_sample_bird_zero_horizon_matches_initial(tmp_path):
    body = dict(BASE, boltzmann=dict(BASE["boltzmann"], horizon=0.0))
    out = tmp_path / "out"
    assert run(["sample", "--method", "bird", "--config", write_config(tmp_path, body),
                "--out", str(out)]) == EXIT_OK
    rows = io.read_csv(out / "snapshots.csv")
    last = [r for r in rows][-60:]
    first = rows[:60]
    assert [r["x_1"] for r in first] == [r["x_1"] for r in last]
    assert [r["v_1"] for r in first] == [r["v_1"] for r in last]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["n_rings"] == 0
    for key in ("schema_version", "config", "seed", "build_id", "wall_clock", "config_hash"):
        assert key in manifest


@pytest.mark.parametrize("method", ["eki", "eks", "nanbu", "bird"])
def test_sample_is_byte_reproducible(tmp_path, method):
    cfg = write_config(tmp_path, BASE)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert run(["sample", "--method", method, "--config", cfg, "--out", str(out)]) == EXIT_OK
    for name in ("snapshots.csv", "metrics.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    svg = "moments.svg" if method in ("eki", "eks") else "kl.svg"
    assert read_svg_data(outs[0] / svg) == read_svg_data(outs[1] / svg)


def test_seed_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "99")
    with_seed = parse_config(json.dumps(BASE))
    without = parse_config(json.dumps({k: v for k, v in BASE.items() if k != "seed"}))
    assert with_seed.seed(5) == 5
    assert with_seed.seed() == 11
    assert without.seed() == 99
    monkeypatch.delenv(SEED_ENV)
    assert without.seed() == 0


def test_seed_flag_changes_output(tmp_path):
    cfg = write_config(tmp_path, BASE)
    run(["sample", "--method", "eki", "--config", cfg, "--out", str(tmp_path / "a")])
    run(["sample", "--method", "eki", "--config", cfg, "--out", str(tmp_path / "b"),
         "--seed", "12"])
    a = (tmp_path / "a" / "summary.csv").read_bytes()
    b = (tmp_path / "b" / "summary.csv").read_bytes()
    assert a != b
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 12


def test_divergence_exits_1(tmp_path, capsys):
    body = {"schema_version": 1,
            "kalman": {"problem": {"A": 1.0, "prior_mean": 0.0, "prior_cov": 1.0,
                                   "noise_cov": 1e-30, "y": 1e30},
                       "n_particles": 10, "step_size": 0.5}}
    code = run(["sample", "--method", "eki", "--config", write_config(tmp_path, body),
                "--out", str(tmp_path / "o")])
    assert code == EXIT_RUNTIME
    assert "diverged" in capsys.readouterr().err


def test_baseline_command(tmp_path):
    out = tmp_path / "base"
    assert run(["baseline", "--target", "doublewell_1d", "--n", "300", "--out", str(out)]) == 0
    rows = io.read_csv(out / "reference.csv")
    assert len(rows) == 300 and {r["time"] for r in rows} == {"-1.0"}
    assert "histograms" in read_svg_data(out / "reference.svg")


def test_experiment_kalman_rate_default_config_smoke(tmp_path):
    body = {"schema_version": 1, "experiment": {"n_seeds": 10, "n_list": [8, 16, 32]}}
    out = tmp_path / "rate"
    assert run(["experiment", "--name", "kalman-rate", "--config",
                write_config(tmp_path, body), "--out", str(out), "--threads", "1"]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert np.isfinite(manifest["report"]["slope_x"])


def test_experiment_rejects_foreign_keys(tmp_path):
    body = {"schema_version": 1, "experiment": {"potential": "quadratic_1d"}}
    assert run(["experiment", "--name", "coupling", "--config", write_config(tmp_path, body),
                "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mfsampler", "validate", "--config",
                           write_config(tmp_path, BASE)], capture_output=True, text=True)
    assert proc.returncode == 0
