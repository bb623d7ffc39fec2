"""Tests for RunConfig parsing, layering and builders."""
from __future__ import annotations

import time

import pytest

from latentveil.config import DEFAULTS, RunConfig
from latentveil.errors import ConfigError, ValidationError
from latentveil.generator import BlobGeneratorConfig
from latentveil.threats import ThreatModelID
from latentveil.utils.file_utils import write_manifest


def test_defaults_are_coerced():
    cfg = RunConfig()
    assert cfg["generator.size"] == 64
    assert cfg["optimizer.learning_rate"] is None
    assert cfg["cache.enabled"] is True
    assert cfg["obfuscator.mask_rect"] is None
    assert cfg.source("generator.size") == "default"


def test_every_key_has_a_coercible_default():
    cfg = RunConfig()
    assert [row[0] for row in cfg.rows()] == list(DEFAULTS)


def test_set_override_wins_and_records_source():
    cfg = RunConfig.load(overrides=["generator.size=32", "timing=wall"])
    assert cfg["generator.size"] == 32
    assert cfg.raw("generator.size") == "32"
    assert cfg.source("timing") == "--set"


def test_unknown_override_names_cli_line():
    with pytest.raises(ConfigError) as excinfo:
        RunConfig.load(overrides=["generator.colour=red"])
    assert excinfo.value.key == "generator.colour"
    assert excinfo.value.line == "<cli>"
    assert str(excinfo.value).startswith("line <cli>: key 'generator.colour'")


def test_bad_value_is_rejected():
    with pytest.raises(ConfigError, match="bad value"):
        RunConfig.load(overrides=["generator.size=big"])


def test_assignment_without_equals_is_rejected():
    with pytest.raises(ConfigError, match="expected key=value"):
        RunConfig.load(overrides=["generator.size"])


def test_file_layering_and_line_numbers(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# experiment settings\n"
        "\n"
        "export generator.blobs=8\n"
        "optimizer.kind = 'adam'\n"
        "dataset.seed=11\n",
        encoding="utf-8",
    )
    cfg = RunConfig.load(path, overrides=["dataset.seed=12"])
    assert cfg["generator.blobs"] == 8
    assert cfg["optimizer.kind"] == "adam"
    assert cfg.source("optimizer.kind") == str(path)
    assert cfg["dataset.seed"] == 12
    assert cfg.source("dataset.seed") == "--set"


def test_file_error_reports_its_line(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("generator.size=32\n\nnot.a.key=1\n", encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        RunConfig.load(path)
    assert excinfo.value.line == 3


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        RunConfig.load(tmp_path / "absent.cfg")


@pytest.mark.parametrize("raw,expected", [("yes", True), ("off", False), ("1", True)])
def test_boolean_spellings(raw, expected):
    assert RunConfig.load(overrides=[f"cache.enabled={raw}"])["cache.enabled"] is expected


def test_lists_and_rects():
    cfg = RunConfig.load(overrides=["eval.threats=T3,T1", "obfuscator.mask_rect=1:2:5:6"])
    assert cfg.eval_threats() == [ThreatModelID.parse("T3"), ThreatModelID.parse("T1")]
    assert cfg["obfuscator.mask_rect"] == (1, 2, 5, 6)


def test_unknown_method_token_is_rejected():
    with pytest.raises(ConfigError, match="unknown obfuscator"):
        RunConfig.load(overrides=["eval.methods=none,sharpen@2"])


# ---- builders ----------------------------------------------------------------

def test_generator_and_optimizer_builders():
    cfg = RunConfig.load(overrides=["generator.blobs=4", "generator.size=16",
                                    "optimizer.kind=adam", "optimizer.max_steps=7"])
    assert cfg.generator() == BlobGeneratorConfig(n_blobs=4, size=16)
    opt = cfg.optimizer()
    assert opt.kind == "adam"
    assert opt.learning_rate == 0.05
    assert opt.max_steps == 7


def test_eval_methods_use_config_defaults():
    cfg = RunConfig.load(overrides=["eval.methods=none,pixelate,deepblur@2.5",
                                    "obfuscator.block=6"])
    specs = cfg.eval_methods()
    assert [spec.kind for spec in specs] == ["identity", "pixelate", "deepblur"]
    assert specs[1].block == 6
    assert specs[2].sigma == 2.5
    assert specs[2].label == "deepblur@2.5"


def test_initial_latent_matches_generator_shape():
    cfg = RunConfig.load(overrides=["generator.blobs=5", "inversion.mean_samples=10"])
    assert cfg.initial_latent().shape == (5, 6)
    cfg.set("inversion.init", "random")
    assert cfg.initial_latent().shape == (5, 6)


def test_split_and_training_builders():
    cfg = RunConfig.load(overrides=["split.train=3", "classifier.epochs=5",
                                    "classifier.extractor=pixel"])
    assert cfg.split().train == 3
    train = cfg.train_config()
    assert train.epochs == 5
    assert train.extractor.kind == "pixel"


def test_clock_selection():
    assert RunConfig().clock()() == 0.0
    assert RunConfig.load(overrides=["timing=wall"]).clock() is time.perf_counter


def test_empty_cache_path_means_default():
    assert RunConfig().cache_path() is None
    assert RunConfig.load(overrides=["cache.path=/tmp/x.db"]).cache_path() == "/tmp/x.db"


# ---- range errors --------------------------------------------------------------

def test_out_of_range_override_names_its_key_and_line():
    cfg = RunConfig.load(overrides=["optimizer.kind=sgdm", "optimizer.momentum=1.5"])
    with pytest.raises(ConfigError) as excinfo:
        cfg.optimizer()
    assert excinfo.value.key == "optimizer.momentum"
    assert excinfo.value.line == "<cli>"
    assert str(excinfo.value).startswith("line <cli>: key 'optimizer.momentum': momentum must be")


def test_range_error_blames_the_key_not_a_later_valid_one():
    cfg = RunConfig.load(overrides=["split.test=0", "split.seed=3"])
    with pytest.raises(ConfigError) as excinfo:
        cfg.split()
    assert excinfo.value.key == "split.test"


def test_range_error_from_file_reports_its_line(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("generator.size=16\nclassifier.batch_size=0\n")
    cfg = RunConfig.load(path)
    with pytest.raises(ConfigError) as excinfo:
        cfg.train_config()
    assert excinfo.value.key == "classifier.batch_size"
    assert excinfo.value.line == 2


def test_out_of_range_method_token_blames_eval_methods():
    cfg = RunConfig.load(overrides=["eval.methods=none,pixelate@0"])
    with pytest.raises(ConfigError) as excinfo:
        cfg.eval_methods()
    assert excinfo.value.key == "eval.methods"


def test_bad_explicit_token_stays_a_validation_error():
    with pytest.raises(ValidationError):
        RunConfig().obfuscator("pixelate@0")


def test_validate_checks_every_cheap_builder():
    RunConfig().validate()
    with pytest.raises(ConfigError, match="generator.blobs"):
        RunConfig.load(overrides=["generator.blobs=1"]).validate()


def test_manifest_replays_its_config_and_keeps_later_overrides(tmp_path):
    recorded = RunConfig.load(overrides=["generator.size=32", "eval.threats=T2"])
    target = write_manifest(tmp_path / "eval.csv", {"config": recorded.as_dict()})
    cfg = RunConfig.load(target, ["eval.threats=T3"])
    assert cfg["generator.size"] == 32
    assert cfg.source("generator.size") == str(target)
    assert cfg["eval.threats"] == [ThreatModelID.T3]


def test_manifest_without_config_is_a_config_error(tmp_path):
    target = write_manifest(tmp_path / "eval.csv", {"report": {"n": 1}})
    with pytest.raises(ConfigError, match="no config mapping"):
        RunConfig.load(target)


def test_manifest_with_an_unknown_key_names_it(tmp_path):
    target = write_manifest(tmp_path / "eval.csv", {"config": {"generator.colour": "red"}})
    with pytest.raises(ConfigError, match="key 'generator.colour'"):
        RunConfig.load(target)
