import dataclasses

import pytest

from cogcbt.config import RunConfig, dump_config, load_config, parse_int_list
from cogcbt.errors import ConfigError


def write(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return path


def test_empty_file_gives_defaults(tmp_path):
    cfg, warnings = load_config(write(tmp_path, ""))
    assert warnings == []
    assert cfg.esn.spectral_radius == 0.98
    assert cfg.esn.input_scaling == 1e-6
    assert cfg.esn.leakage == 1.0
    assert cfg.esn.n_transient == 100
    assert cfg.dgn.learning_rate == 0.005
    assert cfg.dgn.epochs == 500
    assert cfg.recall.lags == tuple(range(5, 41))


def test_no_file_equals_empty_file(tmp_path):
    assert load_config(None)[0] == load_config(write(tmp_path, ""))[0]


def test_lr_override_changes_only_that_field(tmp_path):
    cfg, _ = load_config(write(tmp_path, "[dgn]\nlr = 0.002\n"))
    base = RunConfig()
    assert cfg.dgn.learning_rate == 0.002
    assert dataclasses.replace(cfg.dgn, learning_rate=base.dgn.learning_rate) == base.dgn
    assert (cfg.esn, cfg.synth, cfg.coopt, cfg.recall, cfg.run) == (base.esn, base.synth, base.coopt, base.recall, base.run)


def test_alias_and_full_name_conflict(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[dgn]\nlr = 0.002\nlearning_rate = 0.003\n"))


def test_malformed_numeric_names_key(tmp_path):
    with pytest.raises(ConfigError, match="esn.spectral_radius"):
        load_config(write(tmp_path, "[esn]\nspectral_radius = lots\n"))


def test_malformed_ini(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "spectral_radius = 1\n"))


def test_invalid_value_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[esn]\nleakage = 2\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[esn]\nupdate_rule = other\n"))


def test_update_rule_aliases(tmp_path):
    assert load_config(write(tmp_path, "[esn]\nupdate_rule = standard\n"))[0].esn.update_rule == "standard_leaky"
    assert load_config(write(tmp_path, "[esn]\nupdate_rule = paper\n"))[0].esn.update_rule == "paper_eq1"


def test_unknown_keys_warn(tmp_path):
    _, warnings = load_config(write(tmp_path, "[esn]\ncolour = red\n[extra]\na = 1\n"))
    assert any("esn.colour" in w for w in warnings)
    assert any("extra" in w for w in warnings)


def test_seed_propagates(tmp_path):
    cfg, warnings = load_config(write(tmp_path, "[run]\nseed = 7\n[dgn]\nseed = 3\n"))
    assert cfg.dgn.seed == cfg.esn.seed == 7
    assert warnings


def test_dump_load_idempotent(tmp_path):
    cfg, _ = load_config(write(tmp_path, "[dgn]\nlr = 0.002\nlayer_dims = 1,8,4\n[recall]\nlags = 5-10,12\n[synth]\nview_scales = 1,2,3,4\n"))
    again, warnings = load_config(write(tmp_path, dump_config(cfg)))
    assert again == cfg and warnings == []
    assert dump_config(again) == dump_config(cfg)


def test_parse_int_list():
    assert parse_int_list("5-8, 12") == (5, 6, 7, 8, 12)
    assert parse_int_list("3") == (3,)
    with pytest.raises(ValueError):
        parse_int_list("8-5")
