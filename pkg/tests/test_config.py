import json

import pytest

from darts_forge.config import DATA_PRESETS, OPTIM_PRESETS, ConfigError, RunConfig, load_config, write_resolved
from darts_forge.nn import TransformationKind


def test_defaults_resolve_to_desk_preset():
    cfg = RunConfig()
    mc = cfg.model_config()
    assert (mc.cell.k, mc.cell.channels, mc.feature_dim) == (3, 8, 13)
    tc = cfg.train_config()
    assert tc.optim == OPTIM_PRESETS["desk"] and tc.max_epochs == 15 and tc.seed == 0


def test_toml_and_json_give_the_same_run(tmp_path):
    (tmp_path / "r.toml").write_text(
        'preset = "desk"\nseed = 4\nmax_epochs = 2\n'
        '[model]\nfrontend = "vgg"\n[cell]\nk = 2\ncandidates = ["SkipConnect", "Conv3x3"]\n'
        '[optim]\nalpha_lr = 0.5\n[train]\nbatch_size = 4\n'
        '[[tasks]]\nid = "a"\npath = "data/a"\n')
    doc = {"preset": "desk", "seed": 4, "max_epochs": 2, "model": {"frontend": "vgg"},
           "cell": {"k": 2, "candidates": ["SkipConnect", "Conv3x3"]}, "optim": {"alpha_lr": 0.5},
           "train": {"batch_size": 4}, "tasks": [{"id": "a", "path": "data/a"}]}
    (tmp_path / "r.json").write_text(json.dumps(doc))
    a, b = load_config(tmp_path / "r.toml"), load_config(tmp_path / "r.json")
    assert a == b
    mc = a.model_config()
    assert mc.frontend == "vgg" and mc.cell.candidates == (TransformationKind.SkipConnect,
                                                          TransformationKind.Conv3x3)
    assert a.train_config().batch_size == 4 and a.optimizer_config().alpha_lr == 0.5


def test_resolved_config_reloads_to_the_same_run(tmp_path):
    cfg = RunConfig(seed=7, optim={"weight_lr": 0.02}, out=str(tmp_path))
    path = write_resolved(cfg, tmp_path)
    again = load_config(path)
    assert again == cfg
    assert json.loads(path.read_text())["resolved"]["train"]["optim"]["weight_lr"] == 0.02


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"model": {"depth": 3}},
    {"cell": {"nodes": 3}},
    {"optim": {"lr": 0.1}},
    {"train": {"epochs": 3}},
    {"tasks": [{"id": "a"}]},
    {"synthetic": [{"task_id": "a", "colour": "red"}]},
    {"preset": "huge"},
    {"mode": "everything"},
    {"max_epochs": 0},
])
def test_bad_configs_rejected(doc):
    with pytest.raises(ConfigError):
        RunConfig.from_mapping(doc)


def test_invalid_values_surface_as_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig(cell={"k": 0}).model_config()
    with pytest.raises(ConfigError):
        RunConfig(optim={"alpha_lr": -1}).optimizer_config()
    (tmp_path / "x.toml").write_text("seed = [")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "x.toml")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")


def test_synthetic_defaults_form_one_family(tmp_path):
    cfg = RunConfig(seed=2, out=str(tmp_path))
    pairs = cfg.synthetic_configs()
    assert [c.task_id for c, _ in pairs] == ["src-a", "src-b", "target"]
    assert {c.family_seed for c, _ in pairs} == {2}
    assert len({c.seed for c, _ in pairs}) == 3
    assert all(c.n_train == DATA_PRESETS["desk"].n_train for c, _ in pairs)
    with pytest.raises(ConfigError):
        RunConfig(synthetic=[{"task_id": "a", "vocab_size": 1}]).synthetic_configs()
