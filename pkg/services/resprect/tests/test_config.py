"""
Tests for run configuration loading and seeding.
"""

import numpy as np
import pytest

from services.resprect.app.core.config import (
    RunConfig,
    Settings,
    build_config,
    load_config,
    parse_config_text,
)
from services.resprect.app.core.seeding import SeedStreams, STREAMS, derive_seed, episode_seed, stream_rng
from shared.utils.exceptions import ConfigurationError, ValidationError


@pytest.fixture
def config_file(tmp_path):
    def _write(text: str):
        path = tmp_path / "run.cfg"
        path.write_text(text, encoding="utf-8")
        return path
    return _write


# ============================================
# Loading
# ============================================

@pytest.mark.unit
class TestLoadConfig:

    def test_empty_file_gives_default_hyperparameters(self, config_file):
        config = load_config(config_file(""))
        assert config.optimizer == "adam"
        assert config.learning_rate == 3e-4
        assert config.gamma == 0.99
        assert config.buffer_size == 1_000_000
        assert config.hidden_layers == 2
        assert config.hidden_units == 2048
        assert config.batch_size == 256
        assert config.nonlinearity == "relu"
        assert config.tau == 0.005
        assert config.target_update_interval == 1
        assert config.gradient_steps == 10
        assert config.train_freq == 10
        assert config.total_timesteps == 1_000_000
        assert config.ent_coef_init == 0.01
        assert config.learning_starts == 1000
        assert config.effective().target_entropy == -7.0

    def test_cli_overrides_file(self, config_file):
        config = load_config(config_file("gamma = 0.9\n"), {"gamma": "0.5"})
        assert config.gamma == 0.5

    def test_file_overrides_subcommand_defaults(self, config_file):
        config = load_config(config_file("task_family = heldout_3\n"), defaults={"task_family": "pretrain"})
        assert config.task_family == "heldout_3"

    def test_comments_and_blank_lines(self, config_file):
        config = load_config(config_file("# discount\n\ngamma = 0.5  # lower\nseed = 3\n"))
        assert config.gamma == 0.5
        assert config.seed == 3

    def test_out_of_range_value(self, config_file):
        with pytest.raises(ValidationError) as exc_info:
            load_config(config_file("gamma = 1.5\n"))
        assert exc_info.value.details["field"] == "gamma"

    def test_unknown_key(self, config_file):
        with pytest.raises(ConfigurationError):
            load_config(config_file("gama = 0.5\n"))

    def test_duplicate_key(self, config_file):
        with pytest.raises(ConfigurationError):
            load_config(config_file("gamma = 0.5\ngamma = 0.6\n"))

    def test_malformed_line(self):
        with pytest.raises(ConfigurationError):
            parse_config_text("gamma 0.5")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "nope.cfg")

    def test_residual_modes_need_a_base(self):
        with pytest.raises(ValidationError):
            build_config({"mode": "resprect"})
        with pytest.raises(ValidationError):
            build_config({"mode": "eval"})

    def test_unknown_task_family(self):
        with pytest.raises(ValidationError) as exc_info:
            load_config(None, {"task_family": "no_such_object"})
        assert exc_info.value.details["field"] == "task_family"

    def test_every_known_task_family_loads(self):
        for family in ["pretrain"] + [f"heldout_{i}" for i in range(7)]:
            assert build_config({"task_family": family}).task_family == family

    def test_none_clears_optional_keys(self):
        assert build_config({"base_checkpoint": "none"}).base_checkpoint is None

    def test_only_two_hidden_layers(self):
        with pytest.raises(ValidationError):
            build_config({"hidden_layers": "3"})


@pytest.mark.unit
class TestRunConfig:

    def test_config_text_round_trip(self, tmp_path):
        config = RunConfig(
            mode="resprect", base_checkpoint=tmp_path / "base.ckpt", gamma=0.5,
            fixed_alpha=True, output_dir=tmp_path / "out",
        )
        assert build_config(parse_config_text(config.to_config_text())) == config

    def test_hash_is_stable_and_sensitive(self):
        a = RunConfig(seed=1)
        assert a.config_hash() == RunConfig(seed=1).config_hash()
        assert a.config_hash() != RunConfig(seed=2).config_hash()

    def test_derived_views(self):
        config = RunConfig(num_fingers=4, gradient_steps=3)
        assert config.action_dim == 8
        assert config.env_config().num_fingers == 4
        assert config.sac_hyperparams().gradient_steps == 3
        assert config.sac_hyperparams(gradient_steps=1).gradient_steps == 1

    def test_explicit_target_entropy_is_kept(self):
        assert RunConfig(target_entropy=-3.0).effective().target_entropy == -3.0


@pytest.mark.unit
def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("LOG_LEVEL", "DEBUG")
    monkeypatch.setenv("RUNS_DIR", "/tmp/resprect-runs")
    settings = Settings()
    assert settings.LOG_LEVEL == "DEBUG"
    assert str(settings.RUNS_DIR) == "/tmp/resprect-runs"


# ============================================
# Seeding
# ============================================

@pytest.mark.unit
class TestSeeding:

    def test_derive_seed_is_stable(self):
        assert derive_seed(0, "env") == derive_seed(0, "env")
        assert derive_seed(0, "env") != derive_seed(0, "replay")
        assert derive_seed(0, "env") != derive_seed(1, "env")

    def test_streams_are_independent(self):
        a = SeedStreams(0)
        b = SeedStreams(0)
        a.env.random(1000)
        assert a.replay.random() == b.replay.random()

    def test_every_stream_is_available(self):
        streams = SeedStreams(3)
        for name in STREAMS:
            assert streams[name].random() == stream_rng(3, name).random()

    def test_episode_seed_range(self):
        rng = np.random.default_rng(0)
        seeds = [episode_seed(rng) for _ in range(100)]
        assert all(0 <= s < 2**31 - 1 for s in seeds)
