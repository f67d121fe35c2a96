"""EDN1 checkpoint codec: bit-exact round trips and corruption errors."""

import struct

import pytest
import torch

from hierlearn.checkpoint import (
    MAGIC,
    BadMagicError,
    PayloadMismatchError,
    VersionMismatchError,
    load_checkpoint,
    save_checkpoint,
)
from hierlearn.contrastive import StageSchedule, TrainConfig
from hierlearn.networks import EncoderConfig, build_model_pair

TINY_TRAIN = TrainConfig(
    bank_capacity=32,
    batch_size=2,
    schedule=StageSchedule(((0, 5), (2, 5))),
    encoder=EncoderConfig(
        input_size=16, channel_widths=(4, 8), projection_hidden_dim=8, projection_out_dim=8
    ),
)


@pytest.fixture()
def saved(tmp_path):
    pair = build_model_pair(TINY_TRAIN.encoder, momentum=0.97, seed=11)
    path = tmp_path / "model.edn1"
    save_checkpoint(pair, TINY_TRAIN, path)
    return pair, path


def test_roundtrip_bit_exact(saved):
    pair, path = saved
    loaded, config = load_checkpoint(path)
    assert config == TINY_TRAIN
    assert loaded.momentum == 0.97
    orig = dict(pair.query.named_parameters())
    orig.update({f"key.{n}": p for n, p in pair.key.named_parameters()})
    new = dict(loaded.query.named_parameters())
    new.update({f"key.{n}": p for n, p in loaded.key.named_parameters()})
    assert orig.keys() == new.keys()
    for name in orig:
        assert torch.equal(orig[name], new[name]), name


def test_header_layout(saved):
    _, path = saved
    blob = path.read_bytes()
    assert blob[:4] == MAGIC
    assert blob[4] == 1
    (header_len,) = struct.unpack("<Q", blob[5:13])
    assert blob[13 : 13 + header_len].decode("utf-8").startswith("{")


def test_bad_magic(saved, tmp_path):
    _, path = saved
    corrupted = tmp_path / "bad.edn1"
    corrupted.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(BadMagicError):
        load_checkpoint(corrupted)


def test_version_mismatch(saved, tmp_path):
    _, path = saved
    blob = bytearray(path.read_bytes())
    blob[4] = 9
    corrupted = tmp_path / "ver.edn1"
    corrupted.write_bytes(bytes(blob))
    with pytest.raises(VersionMismatchError):
        load_checkpoint(corrupted)


def test_truncated_payload(saved, tmp_path):
    _, path = saved
    blob = path.read_bytes()
    corrupted = tmp_path / "trunc.edn1"
    corrupted.write_bytes(blob[:-8])
    with pytest.raises(PayloadMismatchError):
        load_checkpoint(corrupted)


def test_extended_payload(saved, tmp_path):
    _, path = saved
    corrupted = tmp_path / "ext.edn1"
    corrupted.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
    with pytest.raises(PayloadMismatchError):
        load_checkpoint(corrupted)
