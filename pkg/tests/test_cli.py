"""Config loading, flag overrides, exit codes, and output files."""
import json
import textwrap

import numpy as np
import pytest

from jumpflow.cli import ConfigError, _resolve_workers, load_config, main

GOOD = """\
schema_version = 1

[scenario]
template = "levy_barrier"
drift = [0.5, 1.0]
diffusion = [0.8, 0.5]
jump_scale = [0.0, 1.0]
jump_mass = 1.0
mark_law = "unit"
barrier_level = 1.0
x0 = 0.0
horizon = 1.0

[run]
schedule = [1, 4]
paths = 20
master_seed = 11
n_steps = 100

[validation]
samples = 40
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return str(p)


def test_load_config_happy_path(tmp_path):
    cfg = load_config(write(tmp_path, GOOD))
    assert cfg.template_id == "levy_barrier"
    assert cfg.plan.schedule == (1, 4)
    assert cfg.plan.paths == 20
    assert cfg.params["mark_law"] == "unit"
    assert cfg.validation_mode == "strict"
    assert cfg.formats == ("json", "csv")


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.toml"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "schema_version = 99\n[scenario]\n[run]\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, GOOD.replace("schema_version = 1\n", "")))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, GOOD.replace('"levy_barrier"', '"no_such"')))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, GOOD.replace("paths = 20", "paths = 0")))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, GOOD + "\n[extra_table]\nx = 1\n"))


def test_unknown_keys_tolerated_in_warn_mode(tmp_path, capsys):
    text = GOOD.replace("samples = 40", 'samples = 40\nmode = "warn"')
    text += "\n[extra_table]\nx = 1\n"
    cfg = load_config(write(tmp_path, text))
    assert cfg.validation_mode == "warn"
    assert "unknown key" in capsys.readouterr().err


def test_resolve_workers(monkeypatch):
    monkeypatch.delenv("JUMPFLOW_WORKERS", raising=False)
    assert _resolve_workers(None) == 1
    assert _resolve_workers(4) == 4
    monkeypatch.setenv("JUMPFLOW_WORKERS", "6")
    assert _resolve_workers(None) == 6
    assert _resolve_workers(2) == 2  # flag wins
    monkeypatch.setenv("JUMPFLOW_WORKERS", "zero")
    with pytest.raises(ConfigError):
        _resolve_workers(None)
    with pytest.raises(ConfigError):
        _resolve_workers(0)


def test_validate_exit_codes(tmp_path):
    good = write(tmp_path, GOOD)
    assert main(["validate", "--config", good]) == 0
    degenerate = write(tmp_path, GOOD.replace("diffusion = [0.8, 0.5]",
                                              "diffusion = 0.0"), "bad.toml")
    assert main(["validate", "--config", degenerate]) == 2
    typo = write(tmp_path, GOOD.replace("jump_mass = 1.0",
                                        "jump_mass = 1.0\nbogus = 3"), "typo.toml")
    assert main(["validate", "--config", typo]) == 3
    assert main(["validate", "--config", str(tmp_path / "missing.toml")]) == 3


def test_converge_outputs_and_worker_invariance(tmp_path, capsys):
    cfg = write(tmp_path, GOOD)
    out1 = tmp_path / "w1"
    out2 = tmp_path / "w2"
    assert main(["converge", "--config", cfg, "--out", str(out1),
                 "--workers", "1"]) == 0
    assert main(["converge", "--config", cfg, "--out", str(out2),
                 "--workers", "2"]) == 0
    r1 = (out1 / "report.json").read_bytes()
    r2 = (out2 / "report.json").read_bytes()
    assert r1 == r2
    assert (out1 / "summary.csv").read_text() == (out2 / "summary.csv").read_text()
    stdout = capsys.readouterr().out
    assert "solution convergence:" in stdout
    assert "hit-time convergence[eps=0.1]:" in stdout

    data = json.loads(r1)
    assert data["paths"] == 20
    assert data["validation_mode"] == "strict"


def test_converge_flag_overrides(tmp_path):
    cfg = write(tmp_path, GOOD)
    out = tmp_path / "o"
    assert main(["converge", "--config", cfg, "--out", str(out),
                 "--seed", "77", "--paths", "10", "--eps", "0.2,0.05",
                 "--skip-validation"]) == 0
    data = json.loads((out / "report.json").read_text())
    assert data["master_seed"] == 77
    assert data["paths"] == 10
    assert data["epsilons"] == [0.05, 0.2]


def test_converge_needs_two_levels(tmp_path):
    cfg = write(tmp_path, GOOD)
    assert main(["converge", "--config", cfg, "--schedule", "4",
                 "--out", str(tmp_path / "x")]) == 3
    assert main(["converge", "--config", cfg, "--schedule", "4,banana",
                 "--out", str(tmp_path / "x")]) == 3


def test_converge_dump_paths(tmp_path):
    cfg = write(tmp_path, GOOD)
    out = tmp_path / "dp"
    assert main(["converge", "--config", cfg, "--out", str(out),
                 "--dump-paths", "--skip-validation"]) == 0
    lines = (out / "paths.csv").read_text().splitlines()
    assert lines[0] == "path_id,n,delta_sq,tau_n,tau_limit,gap"
    assert len(lines) == 1 + 2 * 20  # two levels, twenty paths


def test_json_only_format(tmp_path):
    text = GOOD + '\n[output]\nformats = ["json"]\n'
    cfg = write(tmp_path, text)
    out = tmp_path / "jo"
    assert main(["converge", "--config", cfg, "--out", str(out),
                 "--skip-validation"]) == 0
    assert (out / "report.json").exists()
    assert not (out / "summary.csv").exists()


def test_simulate_writes_coupled_columns(tmp_path):
    text = """\
    schema_version = 1

    [scenario]
    template = "constant_coeffs"
    drift = [1.0, 1.0]
    diffusion = 0.0
    x0 = 0.0
    horizon = 1.0

    [run]
    schedule = [1]
    paths = 1
    master_seed = 0
    n_steps = 8
    """
    cfg = write(tmp_path, text)
    out = tmp_path / "sim"
    assert main(["simulate", "--config", cfg, "--out", str(out),
                 "--path-id", "3", "--skip-validation"]) == 0
    dest = out / "trajectory_3.csv"
    lines = dest.read_text().splitlines()
    assert lines[0] == "time,x_n0,x_n1,is_jump"
    rows = np.array([[float(v) for v in l.split(",")[:3]] for l in lines[1:]])
    # pure drift: limit runs at slope 1, member 1 at slope 2
    np.testing.assert_allclose(rows[:, 1], rows[:, 0], rtol=1e-13, atol=1e-16)
    np.testing.assert_allclose(rows[:, 2], 2.0 * rows[:, 1], rtol=1e-13)


def test_skip_validation_notice(tmp_path, capsys):
    cfg = write(tmp_path, GOOD)
    assert main(["validate", "--config", cfg, "--skip-validation"]) == 0
    assert "validation skipped" in capsys.readouterr().out
