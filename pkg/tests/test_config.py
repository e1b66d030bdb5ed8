import pytest

from homogelast.config import ConfigError, ExperimentConfig


def test_json_roundtrip():
    cfg = ExperimentConfig()
    cfg.grid_n = 24
    again = ExperimentConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_ini_roundtrip():
    cfg = ExperimentConfig()
    cfg.density.kind = "smooth"
    assert ExperimentConfig.from_ini(cfg.to_ini()) == cfg


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="grid_size"):
        ExperimentConfig.from_dict({"grid_size": 3})
    with pytest.raises(ConfigError, match="density.foo"):
        ExperimentConfig.from_dict({"density": {"foo": 1}})


def test_bad_values_are_named():
    with pytest.raises(ConfigError, match="breakpoints"):
        ExperimentConfig.from_dict({"density": {"breakpoints": [0, 0.7, 0.5]}})
    with pytest.raises(ConfigError, match="grid_n"):
        ExperimentConfig.from_dict({"grid_n": "many"})
    with pytest.raises(ConfigError, match="eps_list"):
        ExperimentConfig.from_dict({"eps_list": [2.0]})


def test_load_from_file(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[density]\nkind = \"smooth\"\n[experiment]\ngrid_n = 20\n")
    cfg = ExperimentConfig.load(str(p))
    assert cfg.grid_n == 20 and cfg.density.kind == "smooth"
