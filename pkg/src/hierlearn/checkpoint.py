"""Versioned binary checkpoint format ("EDN1") for a model pair plus its
training configuration.

Layout: 4 magic bytes ``EDN1``, 1 version byte, an 8-byte little-endian
header length, a UTF-8 JSON header (config and an ordered tensor table of
name/shape/offset), then the raw payload of all tensors as row-major
little-endian float32. Offsets are element offsets into the payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"EDN1"
VERSION = 1


class CheckpointError(ValueError):
    """Base class for malformed checkpoint files."""


class BadMagicError(CheckpointError):
    """File does not start with the EDN1 magic bytes."""


class VersionMismatchError(CheckpointError):
    """Unsupported checkpoint version byte."""


class PayloadMismatchError(CheckpointError):
    """Payload length disagrees with the header's tensor shape table."""


def _named_tensors(pair) -> list[tuple[str, torch.Tensor]]:
    named = [(f"query.{n}", p) for n, p in pair.query.named_parameters()]
    named += [(f"key.{n}", p) for n, p in pair.key.named_parameters()]
    return named


def save_checkpoint(pair, config, path) -> None:
    """Write the pair's parameters and ``config`` (a TrainConfig) to ``path``.

    Parameters are stored as float32; training is float32 throughout, so the
    round-trip is bit-exact.
    """
    table = []
    payload = bytearray()
    offset = 0
    for name, tensor in _named_tensors(pair):
        arr = tensor.detach().cpu().to(torch.float32).numpy()
        arr = np.ascontiguousarray(arr)
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        if arr.dtype.byteorder == ">":  # big-endian host: normalize on disk
            arr = arr.astype("<f4")
        payload += arr.tobytes()
        offset += arr.size
    header = {
        "config": config.to_dict(),
        "momentum": pair.momentum,
        "tensors": table,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(payload))


def load_checkpoint(path):
    """Read an EDN1 file and rebuild (ModelPair, TrainConfig).

    Raises BadMagicError, VersionMismatchError, or PayloadMismatchError for
    the corresponding corruptions, CheckpointError for an unreadable header.
    """
    from .contrastive import TrainConfig
    from .networks import build_model_pair

    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 13:
        raise CheckpointError("file too short for an EDN1 header")
    version = data[4]
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}, expected {VERSION}")
    (header_len,) = struct.unpack("<Q", data[5:13])
    if 13 + header_len > len(data):
        raise CheckpointError("declared header length exceeds file size")
    try:
        header = json.loads(data[13 : 13 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable JSON header: {exc}") from exc

    payload = data[13 + header_len :]
    table = header["tensors"]
    total = sum(int(np.prod(entry["shape"])) for entry in table)
    if len(payload) != total * 4:
        raise PayloadMismatchError(
            f"payload holds {len(payload)} bytes, shape table implies {total * 4}"
        )

    config = TrainConfig.from_dict(header["config"])
    pair = build_model_pair(config.encoder, momentum=float(header["momentum"]))
    params = {f"query.{n}": p for n, p in pair.query.named_parameters()}
    params.update({f"key.{n}": p for n, p in pair.key.named_parameters()})
    seen = set()
    flat = np.frombuffer(payload, dtype="<f4")
    for entry in table:
        name, shape, offset = entry["name"], entry["shape"], entry["offset"]
        if name not in params:
            raise CheckpointError(f"unknown tensor {name!r} in shape table")
        size = int(np.prod(shape))
        arr = flat[offset : offset + size].reshape(shape)
        target = params[name]
        if tuple(target.shape) != tuple(shape):
            raise PayloadMismatchError(
                f"tensor {name!r} has shape {shape}, model expects {tuple(target.shape)}"
            )
        with torch.no_grad():
            target.copy_(torch.from_numpy(arr.copy()))
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise PayloadMismatchError(f"tensors missing from checkpoint: {sorted(missing)}")
    return pair, config
