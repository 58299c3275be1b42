"""Config resolution tests: profiles, overrides, strict rejection of mistakes."""

import pytest
import yaml

from clusterdistill.config import (DatasetSpec, config_hash, load_config,
                                   resolved_dict, write_resolved)
from clusterdistill.errors import ConfigError


def write_yaml(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(data, fh)
    return path


class TestProfileDefaults:
    def test_empty_file_with_paper_profile(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        cfg = load_config(path, profile="paper")
        assert cfg.pretrain.clusters == 512
        assert cfg.pretrain.lr == 0.005
        assert cfg.pretrain.batch_size == 512
        assert cfg.pretrain.epochs == 100
        assert cfg.distill.alpha == 0.7
        assert cfg.distill.beta == 0.003
        assert cfg.distill.lr == 0.007
        assert cfg.distill.batch_size == 512
        assert cfg.distill.epochs == 50
        assert cfg.probe.lr == 0.001
        assert cfg.probe.batch_size == 32
        assert cfg.probe.epochs == 50

    def test_desk_defaults(self):
        cfg = load_config(profile="desk")
        assert cfg.pretrain.clusters == 8
        assert cfg.pretrain.epochs == 5
        assert cfg.pretrain.batch_size == 32
        assert cfg.distill.epochs == 10
        assert cfg.dataset.classes == 4
        assert cfg.dataset.train_per_class == 64

    def test_default_profile_is_desk(self):
        cfg = load_config()
        assert cfg.profile == "desk"
        assert cfg.seed == 7

    def test_paper_encoder_dimensions(self):
        cfg = load_config(profile="paper")
        enc = cfg.encoder_config()
        assert enc.block_channels == (256, 512, 1024, 2048)
        assert enc.proj_out == 512
        assert enc.prototype_count == 512
        assert enc.class_count == 10

    def test_desk_encoder_dimensions(self):
        enc = load_config(profile="desk").encoder_config()
        assert enc.block_channels == (32, 64, 128, 256)
        assert enc.proj_out == 64
        assert enc.prototype_count == 8

    def test_distill_class_count_follows_dataset(self, tmp_path):
        path = write_yaml(tmp_path, {"dataset": {"classes": 6}})
        cfg = load_config(path)
        assert cfg.distill.class_count == 6


class TestOverridesAndPrecedence:
    def test_file_overrides_profile(self, tmp_path):
        path = write_yaml(tmp_path, {"pretrain": {"clusters": 16},
                                     "distill": {"alpha": 1.0}})
        cfg = load_config(path, profile="desk")
        assert cfg.pretrain.clusters == 16
        assert cfg.distill.alpha == 1.0
        assert cfg.distill.beta == 0.003  # untouched default

    def test_cli_arguments_override_file(self, tmp_path):
        path = write_yaml(tmp_path, {"profile": "paper", "seed": 1})
        cfg = load_config(path, profile="desk", seed=99)
        assert cfg.profile == "desk"
        assert cfg.seed == 99

    def test_file_profile_and_seed_apply_without_cli(self, tmp_path):
        path = write_yaml(tmp_path, {"profile": "paper", "seed": 31})
        cfg = load_config(path)
        assert cfg.profile == "paper"
        assert cfg.seed == 31

    def test_int_accepted_for_float_field(self, tmp_path):
        path = write_yaml(tmp_path, {"distill": {"alpha": 1}})
        cfg = load_config(path)
        assert cfg.distill.alpha == 1.0
        assert isinstance(cfg.distill.alpha, float)


class TestRejection:
    def test_unknown_top_level_key(self, tmp_path):
        path = write_yaml(tmp_path, {"optimizer": {"momentum": 0.9}})
        with pytest.raises(ConfigError):
            load_config(path)

    def test_unknown_nested_key(self, tmp_path):
        path = write_yaml(tmp_path, {"pretrain": {"momentum": 0.9}})
        with pytest.raises(ConfigError):
            load_config(path)

    def test_type_mismatch_string_for_number(self, tmp_path):
        path = write_yaml(tmp_path, {"distill": {"lr": "fast"}})
        with pytest.raises(ConfigError):
            load_config(path)

    def test_bool_rejected_where_number_expected(self, tmp_path):
        path = write_yaml(tmp_path, {"pretrain": {"epochs": True}})
        with pytest.raises(ConfigError):
            load_config(path)

    def test_alpha_out_of_range(self, tmp_path):
        path = write_yaml(tmp_path, {"distill": {"alpha": 1.5}})
        with pytest.raises(ConfigError):
            load_config(path)

    def test_unknown_profile(self):
        with pytest.raises(ConfigError):
            load_config(profile="gigantic")

    def test_non_mapping_file(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- a\n- b\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_non_mapping_section(self, tmp_path):
        path = write_yaml(tmp_path, {"pretrain": [1, 2]})
        with pytest.raises(ConfigError):
            load_config(path)

    def test_wav_dir_requires_path(self):
        with pytest.raises(ConfigError):
            DatasetSpec(kind="wav_dir", path=None)

    def test_single_class_dataset_rejected(self):
        with pytest.raises(ConfigError):
            DatasetSpec(classes=1)

    def test_unknown_dataset_kind(self):
        with pytest.raises(ConfigError):
            DatasetSpec(kind="tarball")


class TestHashingAndSerialization:
    def test_hash_is_stable_for_equal_configs(self):
        assert config_hash(load_config(profile="desk")) == config_hash(
            load_config(profile="desk"))

    def test_hash_changes_with_any_field(self, tmp_path):
        base = config_hash(load_config(profile="desk"))
        path = write_yaml(tmp_path, {"pretrain": {"lr": 0.021}})
        assert config_hash(load_config(path, profile="desk")) != base
        assert config_hash(load_config(profile="desk", seed=8)) != base

    def test_write_resolved_round_trips(self, tmp_path):
        cfg = load_config(profile="paper", seed=5)
        out = tmp_path / "resolved.yaml"
        write_resolved(cfg, out)
        with open(out, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh)
        assert loaded == resolved_dict(cfg)

    def test_resolved_file_reloads_identically(self, tmp_path):
        cfg = load_config(profile="paper", seed=5)
        out = tmp_path / "resolved.yaml"
        write_resolved(cfg, out)
        reloaded = load_config(out)
        assert reloaded == cfg
        assert config_hash(reloaded) == config_hash(cfg)
