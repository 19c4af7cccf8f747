from pathlib import Path

import pytest

from app.core.config import (
    Settings,
    build_experiment_config,
    load_experiment_config,
    parse_key_values,
    validate_settings,
)
from app.core.exceptions import ConfigError
from app.schemas.experiment import ModelKind, RankingVariant

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_parse_key_values_skips_comments_and_blanks():
    text = "# header\n\nvariant = BA   # inline\nmu=7\n"
    assert parse_key_values(text) == {"variant": "BA", "mu": "7"}


@pytest.mark.parametrize("text", ["variant BA", "= 3", "mu = 7\nmu = 8"])
def test_parse_key_values_errors_name_the_line(text):
    with pytest.raises(ConfigError) as info:
        parse_key_values(text, source="run.conf")
    assert "run.conf:" in str(info.value)


def test_values_are_coerced():
    config = build_experiment_config({"hidden_sizes": "32, 16", "variant": "CT", "normalize": "false", "mu": "3"})
    assert config.hidden_sizes == [32, 16]
    assert config.variant == RankingVariant.CONTRASTIVE
    assert config.normalize is False
    assert config.mu == 3


@pytest.mark.parametrize("values", [
    {"unknown_knob": "1"},
    {"threshold": "0"},
    {"threshold": "1.5"},
    {"temperature": "0"},
    {"momentum": "1.0"},
    {"batch_size": "0"},
    {"variant": "XX"},
    {"sigma_weak": "0.5", "sigma_strong": "0.1"},
    {"strong_transforms": "Identity,Invert"},
    {"dataset": "cifar10"},
])
def test_invalid_values_raise_config_error(values):
    with pytest.raises(ConfigError):
        build_experiment_config(values)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_experiment_config(str(tmp_path / "absent.conf"))


def test_output_dir_override(monkeypatch, tmp_path):
    monkeypatch.setenv("OUTPUT_DIR", str(tmp_path / "override"))
    config = build_experiment_config({"output_dir": "runs/x"})
    assert config.output_dir == str(tmp_path / "override")


@pytest.mark.parametrize("name", ["default.conf", "fixmatch.conf", "supervised-only.conf", "stress-unnormalized.conf"])
def test_shipped_configs_load(name):
    config = load_experiment_config(str(CONFIGS / name))
    assert config.model == ModelKind.MLP


def test_supervised_only_config_disables_unlabeled_terms():
    config = load_experiment_config(str(CONFIGS / "supervised-only.conf"))
    assert config.lambda_u == 0 and config.lambda_r == 0
    assert not config.uses_ranking


def test_validate_settings():
    assert validate_settings(Settings(PRECISION="float64", AUGMENT_WORKERS=2))
    assert not validate_settings(Settings(PRECISION="float16"))
    assert not validate_settings(Settings(AUGMENT_WORKERS=0))
