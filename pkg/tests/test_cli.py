import csv
import json

import numpy as np
import pytest

from wiener4nls import cli
from wiener4nls.config import DEFAULT_SEED, ConfigError, RunConfig, build_config, load_config_file, validate_config
from wiener4nls.spectral import make_grid, spectral_field, write_snapshot

SMALL = ["--dim", "3", "--grid", "8", "--half-width", "16", "--window", "0.125", "--dt", "0.0625"]


def run(args, tmp_path, name="out"):
    out = tmp_path / name
    code = cli.main(list(args) + ["--output-dir", str(out)])
    return code, out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


# ------------------------------------------------------------------ config


def test_yaml_and_json_config(tmp_path):
    y = tmp_path / "c.yaml"
    y.write_text("dim: 4\ngrid: 16\ndistribution: bernoulli\n")
    assert load_config_file(y) == {"dim": 4, "grid": 16, "distribution": "bernoulli"}
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"seed": 5}))
    assert load_config_file(j) == {"seed": 5}


def test_unknown_config_key(tmp_path):
    y = tmp_path / "c.yaml"
    y.write_text("dim: 3\nresolution: 64\n")
    with pytest.raises(ConfigError, match="resolution"):
        load_config_file(y)


def test_violations_are_collected():
    cfg = RunConfig(command="simulate", grid=12, dt=-1.0, sign="up")
    with pytest.raises(ConfigError) as info:
        validate_config(cfg)
    assert len(info.value.violations) == 3


def test_missing_seed_defaults():
    cfg, overrides = build_config({"command": "simulate", "grid": 8, "half_width": 16.0, "window": 0.125},
                                  {"seed": None})
    assert cfg.seed == DEFAULT_SEED and overrides == {}


def test_delta_rejection_names_entry(tmp_path, capsys):
    code, out = run(["norms", "--delta", "0.2", "--schedule", "S0"] + SMALL, tmp_path)
    assert code == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "d/(8delta)" in err and "S0" in err
    assert not (out / "manifest.json").exists()


def test_no_wrap_violation(tmp_path, capsys):
    code, _ = run(["simulate", "--dim", "3", "--grid", "32", "--half-width", "1", "--window", "1", "--dt", "0.25"],
                  tmp_path)
    assert code == cli.EXIT_CONFIG
    assert "no-wrap" in capsys.readouterr().err


def test_zero_samples_is_config_error(tmp_path):
    code, _ = run(["ensemble", "--study", "hs-tail", "--samples", "0"] + SMALL, tmp_path)
    assert code == cli.EXIT_CONFIG


def test_tail_study_needs_enough_samples(tmp_path, capsys):
    code, _ = run(["ensemble", "--study", "hs-tail", "--samples", "50"] + SMALL, tmp_path)
    assert code == cli.EXIT_CONFIG
    assert "samples >= 100" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    code, _ = run(["simulate", "--config", str(tmp_path / "nope.yaml")] + SMALL, tmp_path)
    assert code == cli.EXIT_CONFIG


# ------------------------------------------------------------------ runs


def test_seed_echoed_in_manifest(tmp_path):
    code, out = run(["simulate", "--linear"] + SMALL, tmp_path)
    assert code == cli.EXIT_OK
    m = manifest(out)
    assert m["seed"] == DEFAULT_SEED and m["config"]["seed"] == DEFAULT_SEED
    assert m["status"] == 0 and "elapsed_seconds" in m["timing"] and "platform" in m["host"]


def test_flag_overrides_file(tmp_path):
    y = tmp_path / "c.yaml"
    y.write_text("dim: 4\ngrid: 8\nhalf_width: 16.0\nwindow: 0.125\ndt: 0.0625\n")
    code, out = run(["simulate", "--linear", "--config", str(y), "--dim", "3"], tmp_path)
    assert code == cli.EXIT_OK
    m = manifest(out)
    assert m["config"]["dim"] == 3
    assert m["overrides"]["dim"] == {"file": 4, "flag": 3}


def test_linear_simulate_columns(tmp_path):
    code, out = run(["simulate", "--linear"] + SMALL, tmp_path)
    assert code == cli.EXIT_OK
    with open(out / "trajectory.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["t", "z_hs", "z_l2"]
    assert len(rows) == 3
    l2 = [float(r["z_l2"]) for r in rows]
    assert max(l2) - min(l2) <= 1e-12 * l2[0]


def test_nonlinear_simulate_columns(tmp_path):
    code, out = run(["simulate", "--amplitude", "0.1"] + SMALL, tmp_path)
    assert code == cli.EXIT_OK
    with open(out / "trajectory.csv") as fh:
        assert next(csv.reader(fh)) == ["t", "z_hs", "z_l2", "v_hsc", "u_l2"]
    assert "diagnostics" in json.loads((out / "simulate.json").read_text())


def test_norms_command(tmp_path):
    code, out = run(["norms", "--schedule", "X"] + SMALL, tmp_path)
    assert code == cli.EXIT_OK
    with open(out / "norms.csv") as fh:
        assert next(csv.reader(fh)) == ["entry_q", "entry_r", "weight", "value"]
    assert cli.verify_manifest(out)


def test_manifest_rerun_is_identical(tmp_path):
    args = ["ensemble", "--study", "hs-tail", "--samples", "128", "--seed", "4"] + SMALL
    code, first = run(args, tmp_path, "a")
    assert code == cli.EXIT_OK
    code, second = run(["ensemble", "--config", str(first / "manifest.json")], tmp_path, "b")
    assert code == cli.EXIT_OK
    assert cli.result_digests(first) == cli.result_digests(second)
    assert set(cli.result_digests(first)) == {"tail.csv", "report.json"}


def test_tampered_file_fails_verification(tmp_path):
    code, out = run(["simulate", "--linear"] + SMALL, tmp_path)
    assert code == cli.EXIT_OK and cli.verify_manifest(out)
    (out / "trajectory.csv").write_text("t\n0\n")
    assert not cli.verify_manifest(out)


def test_validate_subset(tmp_path):
    code, out = run(["validate", "--criteria", "1,2"], tmp_path)
    assert code == cli.EXIT_OK
    with open(out / "acceptance.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["criterion"] for r in rows] == ["1", "2"]


# ------------------------------------------------------------------ failure cleanup


def test_partial_outputs_removed(tmp_path, monkeypatch):
    def boom(self, name, obj):
        raise RuntimeError("disk full")

    monkeypatch.setattr(cli.OutputWriter, "write_json", boom)
    code, out = run(["simulate", "--linear"] + SMALL, tmp_path)
    assert code == cli.EXIT_RUNTIME
    assert list(out.iterdir()) == []


def test_data_file_grid_mismatch_is_runtime_error(tmp_path):
    g = make_grid(3, 16, 4.0)
    path = tmp_path / "phi.bin"
    write_snapshot(path, spectral_field(g, np.ones(g.shape)))
    code, out = run(["simulate", "--linear", "--data-file", str(path)] + SMALL, tmp_path)
    assert code == cli.EXIT_RUNTIME
    assert not (out / "manifest.json").exists()
    assert not any(p.name.endswith(".csv") for p in out.iterdir())


def test_stale_manifest_removed_on_failure(tmp_path, monkeypatch):
    code, out = run(["simulate", "--linear"] + SMALL, tmp_path)
    assert (out / "manifest.json").exists()
    monkeypatch.setattr(cli, "cmd_simulate", lambda cfg, w: 1 / 0)
    monkeypatch.setitem(cli.HANDLERS, "simulate", cli.cmd_simulate)
    code, out = run(["simulate", "--linear"] + SMALL, tmp_path)
    assert code == cli.EXIT_RUNTIME
    assert not (out / "manifest.json").exists()
