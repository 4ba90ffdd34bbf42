import pytest

from epigraph.config import RunConfig, load_config, parse_config_text
from epigraph.errors import ConfigError


def test_defaults_resolve():
    config = RunConfig()
    assert config["horizon"] == 2
    assert config["learning_rate"] == 1e-4
    assert config["model.d_model"] == 256
    assert config["train_end_week"] == 850
    assert config["test_start_week"] == 900 and config["test_end_week"] == 991


def test_parse_types_comments_and_blanks():
    config = parse_config_text(
        """
# a comment
horizon = 4
learning_rate = 0.001   # trailing comment
window =
synth.noise = 0.2
eval.charts = false
aggregate.RH - Min = min
"""
    )
    assert config["horizon"] == 4
    assert config["learning_rate"] == 0.001
    assert config["window"] is None
    assert config["eval.charts"] is False
    assert config.aggregation_policies() == {"RH - Min": "min"}


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("no_such_key = 5")


def test_bad_value_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("horizon = often")


def test_missing_equals_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("horizon 4")


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


def test_resolved_text_roundtrips():
    config = parse_config_text("horizon = 8\nsynth.noise = 0.25\n")
    text = config.resolved_text()
    back = parse_config_text(text)
    assert back.values == config.values
    assert back.dynamic == config.dynamic


def test_hash_ignores_output_dir():
    a = parse_config_text("horizon = 8\nout.dir = runs/a\n")
    b = parse_config_text("horizon = 8\nout.dir = runs/b\n")
    c = parse_config_text("horizon = 4\nout.dir = runs/a\n")
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert "out.dir" not in a.echo()


def test_train_config_mapping():
    config = parse_config_text(
        "horizon = 4\nkeep_fraction = 0.2\nmodel.d_model = 32\nmodel.n_heads = 4\n"
    )
    tc = config.train_config()
    assert tc.horizon == 4
    assert tc.effective_window == 12
    assert tc.model.d_model == 32
    assert tc.model.keep_fraction == 0.2


def test_importance_horizons_parsing():
    config = parse_config_text("importance.horizons = 2, 4 ,8\n")
    assert config.importance_horizons() == [2, 4, 8]
    assert RunConfig().importance_horizons() == [2]
    with pytest.raises(ConfigError):
        parse_config_text("importance.horizons = two\n").importance_horizons()


def test_synth_spec_mapping():
    config = parse_config_text("synth.weeks = 99\nsynth.start = 2010-02-03\n")
    spec = config.synth_spec()
    assert spec.weeks == 99
    assert spec.start.isoformat() == "2010-02-03"
