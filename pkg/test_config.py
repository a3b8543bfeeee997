from pathlib import Path

import pytest

from config import (PRESETS, CaseConfig, CaseKind, Experiment, Scheme, build_config, get_preset, log_level,
                    parse_config, resolve_output_dir)
from errors import ConfigError

HERE = Path(__file__).parent


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate(name):
    config = build_config(get_preset(name))
    assert isinstance(config, CaseConfig)


def test_unknown_preset_falls_back():
    assert get_preset("no-such-preset") == PRESETS["example1"]


def test_preset_is_a_copy():
    preset = get_preset("example1")
    preset["grid"]["rho_s"].append(5.0)
    assert PRESETS["example1"]["grid"]["rho_s"] == [1.0]


def test_parse_example_files():
    first = parse_config(HERE / "example1.toml")
    assert first.experiment == Experiment.CONVERGE
    assert first.case == CaseKind.MANUFACTURED
    assert first.time_step(20) == pytest.approx(0.05)

    second = parse_config(HERE / "example2.toml")
    assert second.experiment == Experiment.PULSE2D
    assert second.scheme == Scheme.CN
    assert second.time_step() == pytest.approx(1e-4)
    assert second.material.beta_s == pytest.approx(4e6)
    assert second.boundary["inlet"].traction == "inlet_pulse"


def test_missing_file():
    with pytest.raises(ConfigError):
        parse_config(HERE / "missing.toml")


def test_malformed_toml(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("k = = 1\n")
    with pytest.raises(ConfigError):
        parse_config(path)


def test_nonpositive_step_names_the_field():
    with pytest.raises(ConfigError) as err:
        build_config({"dt": 0.0})
    assert any(msg.startswith("dt") for msg in err.value.errors)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as err:
        build_config({"refinements": 3})
    assert any("refinements" in msg for msg in err.value.errors)


def test_all_errors_reported_together():
    with pytest.raises(ConfigError) as err:
        build_config({"k": 7, "final_time": -1.0, "solver": {"tol": 2.0}})
    assert len(err.value.errors) == 3


def test_final_time_shorter_than_step():
    with pytest.raises(ConfigError) as err:
        build_config({"n": 10, "dt": 0.5, "final_time": 0.1})
    assert "final_time" in err.value.errors[0]


def test_bdf3_pulse_requires_bootstrap():
    data = get_preset("example2")
    data["scheme"] = "bdf3"
    with pytest.raises(ConfigError):
        build_config(data)
    data["bootstrap_cn"] = True
    assert build_config(data).bootstrap_cn


def test_cross_field_checks():
    with pytest.raises(ConfigError):
        build_config({"experiment": "pulse2d", "case": "manufactured"})
    with pytest.raises(ConfigError):
        build_config({"boundary": {"inlet": {"normal": "natural"}}})
    with pytest.raises(ConfigError):
        build_config({"boundary": {"fluid_exterior": {"traction": "inlet_pulse"}}})


def test_time_step_from_mesh():
    config = build_config({"dt": "h", "n": 8})
    assert config.time_step() == pytest.approx(0.125)
    assert config.time_step(40) == pytest.approx(0.025)


def test_output_dir_precedence(tmp_path, monkeypatch):
    config = build_config({"output_dir": str(tmp_path / "from_config")})
    monkeypatch.delenv("FSIHDG_OUT", raising=False)
    assert resolve_output_dir(None, config) == tmp_path / "from_config"
    assert resolve_output_dir(str(tmp_path / "cli"), config) == tmp_path / "cli"
    monkeypatch.setenv("FSIHDG_OUT", str(tmp_path / "env"))
    out = resolve_output_dir(str(tmp_path / "cli"), config)
    assert out == tmp_path / "env" and out.is_dir()


def test_log_level(monkeypatch):
    monkeypatch.setenv("FSIHDG_LOG_LEVEL", "debug")
    assert log_level() == "DEBUG"
    monkeypatch.delenv("FSIHDG_LOG_LEVEL")
    assert log_level() == "INFO"
