import pytest

from riskgraph.config import RunConfig, from_dict, load_config
from riskgraph.errors import ConfigError


def test_defaults():
    cfg = load_config(None)
    assert cfg.seed == 42
    assert cfg.model.hidden_dim == 128 and cfg.model.n_layers == 3 and cfg.model.n_heads == 4
    assert cfg.model.dropout_rate == 0.3
    assert cfg.train.lr0 == 5e-4 and cfg.train.weight_decay == 1e-4
    assert cfg.train.max_epochs == 200 and cfg.train.batch_size == 1024
    assert cfg.train.lambda_smooth == 1e-4 and cfg.train.patience == 20
    assert cfg.preprocess.split_fractions == (0.7, 0.1, 0.2)
    assert [r.name for r in cfg.graph.rules] == ["card", "address", "device", "email"]


def test_unknown_keys_are_named():
    with pytest.raises(ConfigError, match="train.learning_rate"):
        from_dict({"train": {"learning_rate": 0.1}})
    with pytest.raises(ConfigError, match="modle"):
        from_dict({"modle": {}})
    with pytest.raises(ConfigError, match="graph.rules.columns"):
        from_dict({"graph": {"rules": [{"name": "x", "columns": ["a"]}]}})


def test_seed_propagates_unless_overridden():
    cfg = from_dict({"seed": 7, "synth": {"seed": 3}})
    assert cfg.train.seed == 7 and cfg.synth.seed == 3
    assert RunConfig().with_seed(9).synth.seed == 9


def test_toml_round_trip(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("""
seed = 5

[model]
aggregation = "degree_norm"
hidden_dim = 16

[train]
pos_weight = 4.0
fanout = [4, 3, 2]

[[graph.rules]]
name = "card"
key_columns = ["card1"]
clique_max = 5

[[schema]]
name = "TransactionID"
kind = "identifier"

[[schema]]
name = "isFraud"
kind = "label"
""")
    cfg = load_config(path)
    assert cfg.model.aggregation == "degree_norm" and cfg.model.hidden_dim == 16
    assert cfg.train.pos_weight == 4.0 and cfg.train.fanout == (4, 3, 2)
    assert cfg.graph.rules[0].clique_max == 5
    assert [c.name for c in cfg.schema] == ["TransactionID", "isFraud"]
    assert from_dict(cfg.to_dict()) == cfg


def test_invalid_values():
    with pytest.raises(ConfigError):
        from_dict({"model": {"hidden_dim": 10, "n_heads": 3}})
    with pytest.raises(ConfigError):
        from_dict({"seed": "x"})
    with pytest.raises(ConfigError, match="identifier"):
        from_dict({"schema": [{"name": "a", "kind": "label"}]})


def test_malformed_toml(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[train\n")
    with pytest.raises(ConfigError):
        load_config(path)
