import json

import pytest

from hpsg.config import ConfigError, PipelineConfig, load_config


def test_defaults_round_trip():
    cfg = PipelineConfig()
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.plane_config.rng_seed == cfg.rng_seed


def test_seed_reaches_plane_detection():
    cfg = PipelineConfig(rng_seed=7)
    assert cfg.plane_config.rng_seed == 7
    assert cfg.fingerprint() != PipelineConfig().fingerprint()


def test_unknown_keys_rejected():
    doc = PipelineConfig().to_dict()
    doc["planes"]["bogus"] = 1
    with pytest.raises(ConfigError, match="bogus"):
        PipelineConfig.from_dict(doc)
    with pytest.raises(ConfigError, match="extra"):
        PipelineConfig.from_dict({"version": 1, "extra": 0})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"version": 2})


def test_invalid_values_are_config_errors():
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"version": 1, "retrieval": {"k": 0}})


def test_overrides():
    cfg = PipelineConfig().with_overrides(rng_seed=3, retrieval__k=9, retrieval__tau=None)
    assert cfg.rng_seed == 3 and cfg.retrieval.k == 9 and cfg.retrieval.tau == 0.07


def test_load_config(tmp_path):
    assert load_config(None) == PipelineConfig()
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"version": 1, "fusion": {"kappa": 0.3}}))
    assert load_config(p).fusion.kappa == 0.3
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    p.write_text("{")
    with pytest.raises(ConfigError):
        load_config(p)
