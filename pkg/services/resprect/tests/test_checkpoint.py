"""
Tests for checkpoint encoding, decoding and typed loading.
"""

import struct

import numpy as np
import pytest

from services.resprect.app.engines.residual import ResidualAgent
from services.resprect.app.harness.checkpoint import (
    MAGIC,
    CheckpointMetadata,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    load_pretrained_policy,
    save_checkpoint,
)
from services.resprect.app.exceptions import (
    BadMagicError,
    CheckpointFormatError,
    IncompatibleCheckpointError,
    TruncatedCheckpointError,
    VersionMismatchError,
)

from .conftest import TINY_ACTION, TINY_HIDDEN, TINY_OBS


@pytest.fixture
def metadata():
    return CheckpointMetadata(mode="scratch", config_hash="abc", obs_dim=TINY_OBS, action_dim=TINY_ACTION, step=40)


@pytest.fixture
def encoded(tiny_bundle, metadata):
    return encode_checkpoint(tiny_bundle.networks(), metadata)


@pytest.mark.unit
class TestRoundTrip:

    def test_save_load_is_bit_exact(self, tiny_bundle, metadata, tmp_path):
        path = save_checkpoint(tmp_path / "ckpt" / "final.ckpt", tiny_bundle.networks(), metadata)
        checkpoint = load_checkpoint(path)
        assert list(checkpoint.networks) == list(tiny_bundle.networks())
        for name, params in tiny_bundle.networks().items():
            assert checkpoint.networks[name].bit_equal(params)
        assert checkpoint.metadata.step == 40
        assert checkpoint.metadata.arch_tags["log_alpha"] == "scalar:log_alpha"
        assert not path.with_name("final.ckpt.tmp").exists()

    def test_encoding_is_deterministic(self, tiny_bundle, metadata, encoded):
        assert encode_checkpoint(tiny_bundle.networks(), metadata) == encoded
        assert encoded.startswith(MAGIC)

    def test_metadata_extra_survives(self, tiny_bundle):
        meta = CheckpointMetadata(
            mode="resprect", obs_dim=TINY_OBS, action_dim=TINY_ACTION, extra={"residual_scale": 0.5}
        )
        decoded = decode_checkpoint(encode_checkpoint(tiny_bundle.networks(), meta))
        assert decoded.metadata.extra == {"residual_scale": 0.5}

    def test_residual_checkpoint_groups_base_networks(self, tiny_base, hp, tmp_path):
        agent = ResidualAgent.create(tiny_base, TINY_HIDDEN, np.random.default_rng(0), hp)
        meta = CheckpointMetadata(mode="resprect", obs_dim=TINY_OBS, action_dim=TINY_ACTION)
        checkpoint = decode_checkpoint(encode_checkpoint(agent.networks(), meta))
        assert checkpoint.is_residual
        assert set(checkpoint.subset("base")) == {"actor", "critic1", "critic2"}
        assert checkpoint.subset("base")["actor"].bit_equal(tiny_base.actor)
        assert "base/actor" not in checkpoint.top_level()


@pytest.mark.unit
class TestCorruptFiles:

    def test_every_truncation_is_reported(self, encoded):
        for length in list(range(0, 64)) + list(range(64, len(encoded), 97)):
            with pytest.raises(TruncatedCheckpointError):
                decode_checkpoint(encoded[:length])

    def test_trailing_bytes(self, encoded):
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(encoded + b"\x00")

    def test_bad_magic(self, encoded):
        with pytest.raises(BadMagicError):
            decode_checkpoint(b"NOTACKPT" + encoded[8:])

    def test_short_garbage_is_bad_magic(self):
        with pytest.raises(BadMagicError):
            decode_checkpoint(b"XY")

    def test_version_mismatch(self, encoded):
        patched = encoded[:8] + struct.pack("<I", 2) + encoded[12:]
        with pytest.raises(VersionMismatchError) as exc_info:
            decode_checkpoint(patched)
        assert exc_info.value.details["found"] == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointFormatError) as exc_info:
            load_checkpoint(tmp_path / "missing.ckpt")
        assert exc_info.value.error_code == "CHECKPOINT_NOT_FOUND"


@pytest.mark.unit
class TestPretrainedLoad:

    def test_plain_checkpoint_becomes_frozen_base(self, tiny_bundle, metadata, tmp_path):
        path = save_checkpoint(tmp_path / "base.ckpt", tiny_bundle.networks(), metadata)
        base = load_pretrained_policy(path, TINY_OBS, TINY_ACTION)
        assert base.actor.bit_equal(tiny_bundle.actor)
        assert base.critic2.bit_equal(tiny_bundle.critic2)
        with pytest.raises(ValueError):
            base.critic1["fc1.bias"][0] = 0.0

    def test_residual_checkpoint_is_rejected(self, tiny_base, hp, tmp_path):
        agent = ResidualAgent.create(tiny_base, TINY_HIDDEN, np.random.default_rng(0), hp)
        meta = CheckpointMetadata(mode="resprect", obs_dim=TINY_OBS, action_dim=TINY_ACTION)
        path = save_checkpoint(tmp_path / "residual.ckpt", agent.networks(), meta)
        with pytest.raises(IncompatibleCheckpointError):
            load_pretrained_policy(path, TINY_OBS, TINY_ACTION)

    def test_dimension_mismatch_is_rejected(self, tiny_bundle, metadata, tmp_path):
        path = save_checkpoint(tmp_path / "base.ckpt", tiny_bundle.networks(), metadata)
        with pytest.raises(IncompatibleCheckpointError):
            load_pretrained_policy(path, 36, 7)
