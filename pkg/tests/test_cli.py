import json

import pytest
from click.testing import CliRunner

from nbodyscatter import create_cli
from nbodyscatter.utils.results import read_record, read_rows

FREE_PAIR = """
scenario = "simulate"

[system]
n = 2
d = 2
masses = [1.0, 1.0]

[system.potential]
kind = "zero"

[run]
t_end = 10.0
samples = 11

[[states]]
p = [1.0, 0.0, -1.0, 0.0]
q = [-1.0, 0.5, 1.0, -0.5]
"""

THREE_BODY = """
scenario = "{scenario}"
seed = 42

[system]
n = 3
d = 2
masses = [1.0, 1.0, 1.0]

[run]
t_end = 5.0
samples = 6

[sampler]
count = 3

[output]
format = "json"
"""


@pytest.fixture
def cli():
    return create_cli()


@pytest.fixture
def runner():
    return CliRunner()


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_simulate_zero_potential(cli, runner, tmp_path):
    config = _write(tmp_path, "free.toml", FREE_PAIR)
    out = tmp_path / "out"
    result = runner.invoke(cli, ["simulate", "--config", str(config), "--out", str(out), "--quiet"])
    assert result.exit_code == 0, result.output
    assert "simulate: 1 trajectories" in result.output
    header, rows = read_rows(out / "trajectory_000.csv")
    energy = [float(row[header.index("H")]) for row in rows]
    assert len(rows) == 11
    assert energy == pytest.approx([1.0] * 11, rel=1e-12)
    record = read_record(out / "summary.json")
    assert record.items[0]["termination"] == "Completed"
    assert record.items[0]["csv"] == "trajectory_000.csv"
    assert json.loads((out / "timing.json").read_text())["scenario"] == "simulate"


def test_invalid_mass_exits_with_configuration_error(cli, runner, tmp_path):
    config = _write(tmp_path, "bad.toml", FREE_PAIR.replace("masses = [1.0, 1.0]", "masses = [1.0, -1.0]"))
    result = runner.invoke(cli, ["simulate", "--config", str(config), "--out", str(tmp_path / "out")])
    assert result.exit_code == 1
    assert "system.masses" in result.output


def test_missing_config_exits_with_configuration_error(cli, runner, tmp_path):
    result = runner.invoke(cli, ["classify", "--out", str(tmp_path)])
    assert result.exit_code == 1
    assert "--config is required" in result.output


def test_classify_sampled_states_are_escaping(cli, runner, tmp_path):
    config = _write(tmp_path, "three.toml", THREE_BODY.format(scenario="classify"))
    out = tmp_path / "out"
    result = runner.invoke(cli, ["classify", "--config", str(config), "--out", str(out), "--horizon", "64",
                                 "--quiet"])
    assert result.exit_code == 0, result.output
    assert "classify: 3/3 escaping" in result.output
    record = read_record(out / "summary.json")
    assert [item["key"] for item in record.items] == [0, 1, 2]
    for item in record.items:
        assert item["status"] == "escaping"
        assert item["entry_time"] == 0.0
        assert all(margin > 0 for margin in item["margins"])
        assert item["tail_bound"] is not None
    assert not (out / "classify.csv").exists()


def test_summary_is_independent_of_thread_count(cli, runner, tmp_path):
    config = _write(tmp_path, "three.toml", THREE_BODY.format(scenario="simulate"))
    summaries = []
    for threads in ("1", "2"):
        out = tmp_path / f"threads_{threads}"
        result = runner.invoke(cli, ["simulate", "--config", str(config), "--out", str(out), "--threads", threads,
                                     "--quiet"])
        assert result.exit_code == 0, result.output
        summaries.append((out / "summary.json").read_bytes())
    assert summaries[0] == summaries[1]


def test_seed_override_changes_sampled_states(cli, runner, tmp_path):
    config = _write(tmp_path, "three.toml", THREE_BODY.format(scenario="simulate"))
    records = []
    for seed in ("1", "2"):
        out = tmp_path / f"seed_{seed}"
        result = runner.invoke(cli, ["simulate", "--config", str(config), "--out", str(out), "--seed", seed,
                                     "--quiet"])
        assert result.exit_code == 0, result.output
        records.append(read_record(out / "summary.json"))
    assert records[0].seed == 1 and records[1].seed == 2
    assert records[0].config_hash != records[1].config_hash
    assert records[0].items != records[1].items


def test_verify_single_check(cli, runner, tmp_path):
    out = tmp_path / "verify"
    result = runner.invoke(cli, ["verify", "--check", "f_alpha_and_W", "--quick", "--out", str(out), "--quiet"])
    assert result.exit_code == 0, result.output
    assert "f_alpha_and_W" in result.output
    record = read_record(out / "verify.json")
    assert record.all_passed is True
    assert [item["name"] for item in record.items] == ["f_alpha_and_W"]


def test_verify_unknown_check(cli, runner, tmp_path):
    result = runner.invoke(cli, ["verify", "--check", "warp_drive", "--out", str(tmp_path), "--quiet"])
    assert result.exit_code == 1
    assert "warp_drive" in result.output


def test_scatter_without_incoming_data(cli, runner, tmp_path):
    config = _write(tmp_path, "free.toml", FREE_PAIR)
    result = runner.invoke(cli, ["scatter", "--config", str(config), "--out", str(tmp_path / "out")])
    assert result.exit_code == 1


def test_scatter_zero_potential(cli, runner, tmp_path):
    text = FREE_PAIR + '\n[[scatter.incoming]]\np = [1.0, 0.0, -1.0, 0.0]\nq = [-1.0, 0.5, 1.0, -0.5]\n'
    config = _write(tmp_path, "scatter.toml", text)
    out = tmp_path / "out"
    result = runner.invoke(cli, ["scatter", "--config", str(config), "--out", str(out), "--quiet"])
    assert result.exit_code == 0, result.output
    item = read_record(out / "summary.json").items[0]
    assert item["p_plus"] == pytest.approx([1.0, 0.0, -1.0, 0.0])
    assert item["deflection_angle"] == 0.0
    assert (out / "scatter.csv").exists()


def test_sweep_requires_two_bodies(cli, runner, tmp_path):
    config = _write(tmp_path, "three.toml", THREE_BODY.format(scenario="sweep"))
    result = runner.invoke(cli, ["sweep", "--config", str(config), "--out", str(tmp_path / "out")])
    assert result.exit_code == 1


@pytest.mark.slow
def test_sweep_matches_rutherford(cli, runner, tmp_path):
    text = """
scenario = "sweep"

[system]
n = 2
d = 2
masses = [1.0, 1.0]

[run]
horizon = 16384.0

[integrator]
rel_tol = 1e-12
abs_tol = 1e-14

[sweep]
impact_parameters = [2.0, 5.0]
speed = 1.5
"""
    config = _write(tmp_path, "sweep.toml", text)
    out = tmp_path / "out"
    result = runner.invoke(cli, ["sweep", "--config", str(config), "--out", str(out), "--quiet"])
    assert result.exit_code == 0, result.output
    for item in read_record(out / "summary.json").items:
        assert item["angle_error"] < 1e-4
