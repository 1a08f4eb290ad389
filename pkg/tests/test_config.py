import pytest

from nbodyscatter.config import OUTPUT_DIR_ENV, apply_overrides, config_hash, load_config, parse_config
from nbodyscatter.errors import ConfigurationError
from nbodyscatter.models import GaussianBump, SoftenedPower

BASE = """
scenario = "simulate"
seed = 3

[system]
n = 2
d = 2
masses = [1.0, 2.0]

[system.potential]
kind = "homogeneous"
alpha = 1.5
coupling = 0.5

[[states]]
p = [1.0, 0.0, -0.5, 0.0]
q = [-10.0, 0.0, 10.0, 0.0]
"""


def _system(**overrides):
    data = {"n": 2, "d": 2, "masses": [1.0, 1.0], "potential": {"kind": "newtonian"}}
    data.update(overrides)
    return {"scenario": "simulate", "system": data}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "experiment.toml"
    path.write_text(BASE)
    return path


def test_load_config(config_file):
    config = load_config(config_file)
    assert config.scenario == "simulate"
    assert config.seed == 3
    assert config.system.potential.alpha == 1.5
    assert config.states[0].to_state().q[0] == -10.0
    assert config.output.format == "both"
    assert config.integrator.method == "DOP853"


def test_negative_mass_names_the_field():
    with pytest.raises(ConfigurationError, match=r"system\.masses\.1"):
        parse_config(_system(masses=[1.0, -1.0]))


def test_mass_count_must_match_n():
    with pytest.raises(ConfigurationError, match="masses: expected 2 entries"):
        parse_config(_system(masses=[1.0, 1.0, 1.0]))


def test_alpha_required_for_homogeneous():
    with pytest.raises(ConfigurationError, match="alpha is required"):
        parse_config(_system(potential={"kind": "homogeneous"}))


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigurationError, match="colour"):
        parse_config(_system(colour="red"))
    with pytest.raises(ConfigurationError, match="scenario"):
        parse_config({"scenario": "orbit", "system": _system()["system"]})


def test_system_required_outside_verify():
    with pytest.raises(ConfigurationError, match=r"\[system\] table is required"):
        parse_config({"scenario": "classify"})
    assert parse_config({"scenario": "verify"}).system is None


def test_toml_syntax_error_reports_line(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text('scenario = "simulate"\n[system\nn = 2\n')
    with pytest.raises(ConfigurationError, match="line 2"):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError, match="cannot read config"):
        load_config(tmp_path / "absent.toml")


def test_overrides(config_file, monkeypatch, tmp_path):
    config = load_config(config_file)
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "from_env"))
    from_env = apply_overrides(config)
    assert from_env.output.directory == str(tmp_path / "from_env")
    from_cli = apply_overrides(config, out=tmp_path / "from_cli", seed=11, horizon=64.0, threads=4,
                               scenario="classify")
    assert from_cli.output.directory == str(tmp_path / "from_cli")
    assert from_cli.seed == 11
    assert from_cli.run.horizon == 64.0
    assert from_cli.threads == 4
    assert from_cli.scenario == "classify"
    with pytest.raises(ConfigurationError, match="seed"):
        apply_overrides(config, seed=-1)


def test_config_hash_ignores_threads_and_output(config_file):
    config = load_config(config_file)
    baseline = config_hash(config)
    assert config_hash(apply_overrides(config, threads=8, out="elsewhere")) == baseline
    assert config_hash(apply_overrides(config, seed=4)) != baseline
    assert len(baseline) == 64


@pytest.mark.parametrize(
    "potential, alpha",
    [
        ({"kind": "zero"}, None),
        ({"kind": "newtonian", "G": 2.0}, 1.0),
        ({"kind": "homogeneous", "alpha": 0.8, "coefficients": [[0.0, 1.0], [1.0, 0.0]]}, 0.8),
        ({"kind": "gaussian_bump", "alpha": 3.0, "amplitude": 2.0}, 3.0),
        ({"kind": "softened_power", "alpha": 1.2, "softening": 0.5}, 1.2),
    ],
)
def test_build_spec(potential, alpha):
    spec = parse_config(_system(potential=potential)).system.build_spec()
    assert spec.n == 2 and spec.d == 2
    if alpha is not None:
        assert spec.potential.alpha == pytest.approx(alpha)


def test_smooth_profiles_are_built():
    bump = parse_config(_system(potential={"kind": "gaussian_bump", "alpha": 3.0})).system.build_spec()
    softened = parse_config(_system(potential={"kind": "softened_power", "alpha": 1.0})).system.build_spec()
    assert isinstance(bump.potential.kind.pairs[(0, 1)], GaussianBump)
    assert isinstance(softened.potential.kind.pairs[(0, 1)], SoftenedPower)


def test_newtonian_coupling_scales_with_G():
    spec = parse_config(_system(masses=[1.0, 3.0], potential={"kind": "newtonian", "G": 2.0})).system.build_spec()
    assert spec.potential.kind.coefficients[0, 1] == pytest.approx(-6.0)
