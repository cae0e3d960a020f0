import struct

import numpy as np
import pytest

from gru_snf._checkpoint import (
    MAGIC,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from gru_snf.errors import CheckpointError, ShapeError
from gru_snf.model import TrainingMetadata, sample_plain


@pytest.fixture
def trained_like(tiny_model):
    metadata = TrainingMetadata(epochs=3, initial_nll=4.5, final_nll=1.25, seed=7)
    return tiny_model.with_parameters(tiny_model.parameters(), metadata=metadata)


def test_roundtrip_is_bitwise(tmp_path, trained_like):
    path = save_checkpoint(trained_like, tmp_path / "nested" / "model.gsnf")
    loaded = load_checkpoint(path)
    assert loaded.metadata == trained_like.metadata
    assert loaded.dims == trained_like.dims
    for name, value in trained_like.parameters().items():
        np.testing.assert_array_equal(loaded.parameters()[name], value)
    assert encode_checkpoint(loaded) == path.read_bytes()


def test_loaded_model_samples_identically(tmp_path, tiny_model):
    loaded = load_checkpoint(save_checkpoint(tiny_model, tmp_path / "m.gsnf"))
    window = np.random.default_rng(0).normal(size=(3, 4))
    a = sample_plain(tiny_model, window, horizon=3, count=2, seed=1)
    b = sample_plain(loaded, window, horizon=3, count=2, seed=1)
    np.testing.assert_array_equal(a.samples, b.samples)
    with pytest.raises(ShapeError):
        sample_plain(loaded, np.zeros((3, 6)), horizon=1, count=1, seed=1)


def test_bad_magic(tiny_model):
    payload = b"NOTMAGIC" + encode_checkpoint(tiny_model)[len(MAGIC) :]
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(payload)


def test_version_mismatch(tiny_model):
    payload = bytearray(encode_checkpoint(tiny_model))
    struct.pack_into("<H", payload, len(MAGIC), 99)
    with pytest.raises(CheckpointError, match="version 99"):
        decode_checkpoint(bytes(payload))


@pytest.mark.parametrize("keep", [-1, -100, 20])
def test_truncation(tiny_model, keep):
    payload = encode_checkpoint(tiny_model)
    with pytest.raises(CheckpointError, match="truncated"):
        decode_checkpoint(payload[:keep])


def test_trailing_bytes(tiny_model):
    with pytest.raises(CheckpointError, match="trailing"):
        decode_checkpoint(encode_checkpoint(tiny_model) + b"\0")


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError) as info:
        load_checkpoint(tmp_path / "absent.gsnf")
    assert info.value.exit_code == 5
