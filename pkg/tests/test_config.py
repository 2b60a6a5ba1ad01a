import pytest
import yaml

from svcforge.config import dump_config, env_overrides, load_config, profile_config
from svcforge.errors import ConfigError


def test_vits_defaults():
    cfg = profile_config("vits")
    assert cfg.audio.sample_rate == 24000 and cfg.audio.hop_length == 240
    assert cfg.pitch.bins == 256
    assert cfg.pbtc.branches == 10 and cfg.pbtc.filters == 256
    assert cfg.content.dim == 1024 and cfg.content.layer == 20
    assert cfg.training.learning_rate == 1e-4
    assert cfg.training.adam_betas == (0.8, 0.99)
    assert cfg.training.batch_size == 96


def test_desk_profile_is_small_and_consistent():
    cfg = profile_config("desk")
    assert cfg.profile == "desk"
    assert cfg.training.segment_size == 8192
    assert cfg.frames_per_segment == 34
    assert cfg.model.hidden_channels < profile_config("vits").model.hidden_channels


def test_unknown_profile():
    with pytest.raises(ConfigError):
        profile_config("huge")


def test_yaml_then_env_precedence(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"profile": "desk", "training": {"batch_size": 4}, "seed": 5}))
    env = {"SVCFORGE_TRAINING__BATCH_SIZE": "8", "SVCFORGE_PITCH__FMIN": "60.5", "OTHER": "x"}
    cfg = load_config(path, environ=env)
    assert cfg.profile == "desk"
    assert cfg.training.batch_size == 8
    assert cfg.pitch.fmin == 60.5
    assert cfg.seed == 5


def test_env_override_parsing():
    out = env_overrides({"SVCFORGE_MODEL__UPSAMPLE_RATES": "[5, 4, 4, 3]", "SVCFORGE_SEED": "3"})
    assert out == {"model": {"upsample_rates": [5, 4, 4, 3]}, "seed": 3}


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("training:\n  batchsize: 3\n")
    with pytest.raises(ConfigError, match="batchsize"):
        load_config(path, environ={})


def test_upsample_product_must_match_hop():
    with pytest.raises(ConfigError, match="hop_length"):
        profile_config("desk").updated({"model": {"upsample_rates": [5, 4, 4, 2]}})


def test_dump_roundtrip(tmp_path):
    cfg = profile_config("desk").updated({"seed": 11})
    dump_config(cfg, tmp_path / "c.yaml")
    again = load_config(tmp_path / "c.yaml", environ={})
    assert again.to_dict() == cfg.to_dict()


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/c.yaml", environ={})
