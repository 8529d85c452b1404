import pytest
import yaml

from tinymm.config import (RunConfig, StageConfig, TrainConfig, apply_overrides,
                           from_dict, load_yaml, to_dict)


def test_round_trip_default_config():
    cfg = RunConfig()
    assert from_dict(to_dict(cfg)) == cfg


def test_round_trip_custom_stages():
    cfg = RunConfig(train=TrainConfig(stages=(
        StageConfig("I", 10, vae_anchors=(32,)),
        StageConfig("IV", 5, lr=1e-4, vae_anchors=(32, 64)))))
    back = from_dict(to_dict(cfg))
    assert back == cfg
    assert isinstance(back.train.stages, tuple)
    assert isinstance(back.train.stages[0], StageConfig)
    assert back.train.stages[1].vae_anchors == (32, 64)


def test_yaml_round_trip(tmp_path):
    cfg = RunConfig(train=TrainConfig(stages=(StageConfig("I", 7),), seed=3))
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(to_dict(cfg)))
    assert load_yaml(path) == cfg


def test_from_dict_rejects_unknown_fields():
    with pytest.raises(KeyError, match="unknown field 'depth'"):
        from_dict({"model": {"depth": 3}})


def test_from_dict_partial_fills_defaults():
    cfg = from_dict({"train": {"seed": 9}})
    assert cfg.train.seed == 9
    assert cfg.model == RunConfig().model


def test_apply_overrides_scalars():
    cfg = apply_overrides(RunConfig(), ["model.d_model=192", "model.heads=6",
                                        "train.seed=4"])
    assert cfg.model.d_model == 192 and cfg.model.heads == 6
    assert cfg.train.seed == 4


def test_apply_overrides_nested_and_lists():
    cfg = RunConfig(train=TrainConfig(stages=(
        StageConfig("I", 10), StageConfig("IV", 5))))
    cfg = apply_overrides(cfg, ["train.stages.1.steps=50",
                                "model.moe.top_k=2",
                                'train.stages.0.vae_anchors=[32]'])
    assert cfg.train.stages[1].steps == 50
    assert cfg.model.moe.top_k == 2
    assert cfg.train.stages[0].vae_anchors == (32,)


def test_apply_overrides_whole_stage_list_as_json():
    cfg = apply_overrides(RunConfig(), [
        'train.stages=[{"name": "I", "steps": 3}, {"name": "II", "steps": 2}]'])
    assert [s.name for s in cfg.train.stages] == ["I", "II"]
    assert cfg.train.stages[0].steps == 3
    assert cfg.train.stages[0].batch_size == 8  # defaults still apply


def test_apply_overrides_errors():
    with pytest.raises(ValueError, match="path=value"):
        apply_overrides(RunConfig(), ["model.d_model"])
    with pytest.raises(KeyError, match="unknown config path"):
        apply_overrides(RunConfig(), ["model.does_not_exist=3"])


def test_stage_config_validation():
    with pytest.raises(ValueError, match="steps"):
        StageConfig("I", steps=0)
    with pytest.raises(ValueError, match="caption_dropout"):
        StageConfig("I", steps=1, caption_dropout=1.0)
    with pytest.raises(ValueError, match="anchor"):
        StageConfig("I", steps=1, vae_anchors=())


def test_none_fields_survive_round_trip():
    # optional fields encoded as None must not be coerced to strings
    data = to_dict(RunConfig())
    assert from_dict(data).model.vocab_size == 0
