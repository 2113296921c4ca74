import json

import pytest

from flux.config import AppConfig, ExperimentConfig, apply_overrides, check, parse_value
from flux.services.sampling import SamplingGrid
from flux.utils import ConfigurationError, ValidationError


def _cfg(*overrides):
    return ExperimentConfig.from_dict(apply_overrides({}, overrides))


@pytest.mark.parametrize("mode", ["gen-data", "pretrain", "finetune", "grad-check", "flops"])
def test_defaults_are_valid(mode):
    _cfg(f'mode="{mode}"').validate()


def test_unknown_keys_are_listed_together():
    with pytest.raises(ConfigurationError) as info:
        ExperimentConfig.from_dict({"bogus": 1, "train": {"stepz": 1}, "model": {"widht": 3}})
    assert info.value.details["unknown_keys"] == ["bogus", "model.widht", "train.stepz"]


def test_partial_sections_keep_experiment_defaults():
    cfg = ExperimentConfig.from_dict({"model": {"depth": 2}, "teacher": {"depth": 2}})
    assert cfg.model.depth == 2 and cfg.model.proj_dim == 128
    assert cfg.teacher.depth == 2 and cfg.teacher.embed_dim == 128


def test_section_must_be_an_object():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"train": 5})


def test_teacher_can_be_disabled():
    cfg = ExperimentConfig.from_dict({"teacher": None})
    assert cfg.teacher is None
    assert cfg.to_dict()["teacher"] is None


def test_overrides_parse_json_values():
    base = {"train": {"lr": 0.1}}
    out = apply_overrides(base, ["train.steps=5", "train.counts=[16,8]", "out_dir=runs/x", "eval.token_opt=true"])
    assert out == {"train": {"lr": 0.1, "steps": 5, "counts": [16, 8]}, "out_dir": "runs/x", "eval": {"token_opt": True}}
    assert base == {"train": {"lr": 0.1}}
    assert parse_value("1e-3") == 1e-3 and parse_value("abc") == "abc"


def test_repeated_overrides():
    assert apply_overrides({}, ["seed=1", "seed=1"]) == {"seed": 1}
    with pytest.raises(ConfigurationError) as info:
        apply_overrides({}, ["train.steps=5", "train.steps=6"])
    assert info.value.details["values"] == [5, 6]


@pytest.mark.parametrize("overrides", [["steps"], ["seed=1", "seed.x=2"]])
def test_malformed_overrides(overrides):
    with pytest.raises(ConfigurationError):
        apply_overrides({}, overrides)


@pytest.mark.parametrize(
    "overrides, fragment",
    [
        (["sampler.f_max=20"], "sampler.f_max"),
        (["model.max_grid=[8,4,4]"], "model.max_grid"),
        (["model.num_classes=5"], "model.num_classes"),
        (["train.counts=[30,15,8]"], "divisible"),
        (["train.counts=[64,16,8]", "train.teacher_count=64"], "smallest candidate pool"),
        (["train.groups=8", "train.counts=[32,16,8]"], "train.groups"),
        (['mode="pretrain"', "model.proj_dim=64"], "proj_dim"),
        (['mode="eval"'], "checkpoint"),
        (['mode="tokenopt"', "tokenopt.frames=[4,32]", 'checkpoint="x"'], "tokenopt.frames"),
    ],
)
def test_cross_section_checks(overrides, fragment):
    with pytest.raises(ValidationError) as info:
        _cfg(*overrides).validate()
    assert fragment in info.value.message


def test_problems_are_reported_together():
    with pytest.raises(ValidationError) as info:
        _cfg("model.num_classes=5", "train.counts=[30,15,8]").validate()
    assert len(info.value.details["problems"]) == 2


def test_flops_mode_skips_cross_checks():
    _cfg('mode="flops"', "model.num_classes=5").validate()


def test_missing_paths(tmp_path):
    with pytest.raises(ConfigurationError):
        _cfg(f'data_dir="{tmp_path / "none"}"').validate()
    with pytest.raises(ConfigurationError):
        _cfg('mode="eval"', f'checkpoint="{tmp_path / "none"}"').validate()


def test_check_wraps_type_errors():
    with pytest.raises(ValidationError):
        check(ExperimentConfig.from_dict({"model": {"embed_dim": "big"}}))


def test_load_file_and_overrides(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"seed": 4, "train": {"steps": 10}}))
    cfg = ExperimentConfig.load(str(path), ["train.steps=3"])
    assert cfg.seed == 4 and cfg.train.steps == 3
    assert cfg.train.counts == (32, 16, 8)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.load(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.load(str(bad))


def test_hash_tracks_content():
    assert _cfg().hash == _cfg().hash
    assert _cfg("seed=1").hash != _cfg().hash
    assert len(_cfg().hash) == 64


def test_eval_grid():
    assert _cfg().eval_grid() == SamplingGrid(16, 56)
    assert _cfg("eval.grid=[8,28]").eval_grid() == SamplingGrid(8, 28)


def test_app_config_from_environment(monkeypatch):
    monkeypatch.setenv("FLUX_NUM_THREADS", "0")
    monkeypatch.setenv("FLUX_RUNS_DIR", "/tmp/flux-runs")
    cfg = AppConfig()
    assert cfg.num_threads == 1 and cfg.runs_dir == "/tmp/flux-runs"
    monkeypatch.setenv("FLUX_NUM_THREADS", "many")
    with pytest.raises(ConfigurationError):
        AppConfig()
