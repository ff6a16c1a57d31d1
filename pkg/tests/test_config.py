import json

import numpy as np
import pytest

from config import HypothesesConfig, RunConfig, load_config, parse_config_text, resolve_model
from kfplab.errors import ConfigError

ENV_KEYS = ("KFPLAB_OUT_DIR", "KFPLAB_MODEL", "KFPLAB_SEED", "KFPLAB_LOG_LEVEL")


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in ENV_KEYS:
        monkeypatch.delenv(key, raising=False)


def _write(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(path)


def test_defaults():
    config = load_config()
    assert config.model.name == "DW1"
    assert config.sweep.h == [0.14, 0.12, 0.10, 0.08, 0.07, 0.06]
    assert config.hypotheses == HypothesesConfig()
    assert config.output.directory == "out"
    assert config.seed == 42
    assert config.to_dict()["solver"]["tol"] == 1e-8


def test_environment_layer(monkeypatch):
    monkeypatch.setenv("KFPLAB_MODEL", "DW2")
    monkeypatch.setenv("KFPLAB_SEED", "7")
    monkeypatch.setenv("KFPLAB_LOG_LEVEL", "debug")
    config = load_config()
    assert config.model.name == "DW2"
    assert config.seed == 7
    assert config.log_level == "DEBUG"


def test_bad_seed_in_environment(monkeypatch):
    monkeypatch.setenv("KFPLAB_SEED", "abc")
    with pytest.raises(ConfigError):
        load_config()


def test_layer_order(monkeypatch, tmp_path):
    monkeypatch.setenv("KFPLAB_MODEL", "DW2")
    path = _write(tmp_path, {"model": {"name": "witten-DW1"}, "h": 0.05})
    config = load_config(path)
    assert config.model.name == "witten-DW1"
    assert config.h == 0.05
    config = load_config(path, overrides={"model": {"name": "DW1"}})
    assert config.model.name == "DW1"


def test_file_updates_nested_sections(tmp_path):
    path = _write(tmp_path, {"solver": {"basis": 60}, "hypotheses": {"eps_grid": [0.2, 0.1]}})
    config = load_config(path)
    assert config.solver.basis == 60
    assert config.solver.count == 6
    assert config.hypotheses.eps_grid == [0.2, 0.1]


def test_unknown_key(tmp_path):
    with pytest.raises(ConfigError, match="unknown configuration key 'solver.nope'"):
        load_config(_write(tmp_path, {"solver": {"nope": 1}}))


def test_wrong_type(tmp_path):
    with pytest.raises(ConfigError, match="wrong type"):
        load_config(_write(tmp_path, {"solver": {"basis": 2.5}}))
    with pytest.raises(ConfigError, match="must be an object"):
        load_config(_write(tmp_path, {"solver": 3}))


def test_malformed_json_reports_position(tmp_path):
    path = _write(tmp_path, '{\n  "h": 0.1,\n  oops\n}')
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.exit_code == 64
    assert info.value.line == 3
    assert info.value.col == 3
    assert "line 3" in str(info.value)


def test_non_object_document():
    with pytest.raises(ConfigError):
        parse_config_text("[1, 2]")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(tmp_path / "absent.json"))


@pytest.mark.parametrize("override", [
    {"h": 0.0},
    {"solver": {"tol": -1.0}},
    {"grid": {"multiplier": 0.5}},
    {"sweep": {"h": [0.1, 0.08, 0.06]}},
    {"sweep": {"h": [0.06, 0.07, 0.08, 0.10, 0.12]}},
    {"hypotheses": {"eps_grid": [0.1, 0.0]}},
    {"degree": 2},
    {"solver": {"count": 0}},
])
def test_validation(override):
    with pytest.raises(ConfigError):
        load_config(overrides=override)


def test_resolve_named_model():
    model = resolve_model(RunConfig())
    assert model.name == "DW1"
    config = RunConfig()
    config.model.name = "DW9"
    with pytest.raises(ConfigError):
        resolve_model(config)


def test_resolve_inline_model(dw1):
    config = RunConfig()
    config.model.inline = json.loads(dw1.to_json())
    model = resolve_model(config)
    assert np.allclose(model.A, dw1.A)
    config.model.inline = {**config.model.inline, "A": [[-1.0, 0.0], [0.0, 1.0]]}
    with pytest.raises(ConfigError):
        resolve_model(config)
