import numpy as np
import pytest

from concalib.config import (
    ConfigFileError, RunConfig, default_config_text, load_run_config,
    parse_config_text, parse_overrides,
)
from concalib.networks import NetworkConfig
from concalib.training import TrainConfig


class TestParsing:
    def test_defaults_without_file(self):
        assert load_run_config() == RunConfig()

    def test_file_overrides_defaults(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("initial_lr = 0.02\nbatch_size = 8\n")
        cfg = load_run_config(path)
        assert cfg.initial_lr == 0.02
        assert cfg.batch_size == 8
        assert cfg.momentum == 0.9  # untouched default

    def test_cli_overrides_beat_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("initial_lr = 0.02\n")
        cfg = load_run_config(path, {"initial_lr": "0.5"})
        assert cfg.initial_lr == 0.5

    def test_comments_and_blank_lines(self):
        text = "# top comment\n\nseed = 3  # trailing\n   \n"
        assert parse_config_text(text) == {"seed": "3"}

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigFileError, match="unknown configuration key"):
            parse_config_text("learning_rate = 0.1\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigFileError, match="duplicate"):
            parse_config_text("seed = 1\nseed = 2\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigFileError, match="key = value"):
            parse_config_text("seed 3\n")

    def test_bad_value_names_key(self):
        with pytest.raises(ConfigFileError, match="batch_size"):
            load_run_config(None, {"batch_size": "many"})

    def test_bool_values(self):
        assert load_run_config(None, {"ground": "false"}).ground is False
        assert load_run_config(None, {"ground": "YES"}).ground is True
        with pytest.raises(ConfigFileError, match="boolean"):
            load_run_config(None, {"ground": "maybe"})

    def test_tuple_values(self):
        cfg = load_run_config(None, {"encoder_widths": "4,8,16",
                                     "embed_dim": "16"})
        assert cfg.encoder_widths == (4, 8, 16)

    def test_parse_overrides(self):
        assert parse_overrides(["seed=4", "fx = 25"]) == {"seed": "4", "fx": "25"}
        with pytest.raises(ConfigFileError, match="key=value"):
            parse_overrides(["seed"])


class TestDerivedConfigs:
    def test_train_config_fields(self):
        cfg = load_run_config(None, {"total_iterations": "77", "seed": "9"})
        tc = cfg.train_config()
        assert isinstance(tc, TrainConfig)
        assert tc.total_iterations == 77
        assert tc.seed == 9
        assert tc.initial_lr == 0.01

    def test_network_config_ties_to_image_size(self):
        cfg = load_run_config(None, {"image_width": "32", "image_height": "16",
                                     "fx": "20", "fy": "20", "cx": "16",
                                     "cy": "8"})
        nc = cfg.network_config()
        assert isinstance(nc, NetworkConfig)
        assert (nc.input_height, nc.input_width) == (16, 32)
        k = cfg.intrinsics()
        assert (k.width, k.height) == (32, 16)

    def test_scene_spec_round_trip(self):
        cfg = load_run_config(None, {"points_per_scene": "200",
                                     "box_count": "1", "pole_count": "0"})
        spec = cfg.scene_spec(seed=5)
        assert spec.points_per_scene == 200
        assert spec.box_count == 1
        assert np.array_equal(spec.extrinsic, np.eye(4))

    def test_extrinsic_key(self):
        raw = "1 0 0 0.5 0 1 0 -0.2 0 0 1 0.1"
        cfg = load_run_config(None, {"extrinsic_gt": raw})
        t = cfg.extrinsic_matrix()
        assert t[0, 3] == 0.5 and t[1, 3] == -0.2 and t[2, 3] == 0.1


class TestDefaultsDocument:
    def test_every_key_present_and_documented(self):
        text = default_config_text()
        cfg = RunConfig()
        for name in vars(cfg):
            assert f"\n{name} = " in "\n" + text

    def test_document_round_trips_to_defaults(self, tmp_path):
        path = tmp_path / "defaults.cfg"
        path.write_text(default_config_text())
        assert load_run_config(path) == RunConfig()
