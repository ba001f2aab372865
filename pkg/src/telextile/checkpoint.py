"""Binary checkpoint files for trained encoders.

Layout, all integers little-endian:

    bytes 0..3    magic "TXE1"
    u32           format version (currently 1)
    u32           length of the UTF-8 JSON block that follows
    JSON block    {"encoder": <config dict>, "metadata": {...}}
    u64           parameter count
    f32 * count   flattened parameters, traversal order of Encoder.params

Round trips are bit-exact: parameters are stored as the same float32
words the encoder holds in memory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import Encoder, EncoderConfig

MAGIC = b"TXE1"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Base class for unreadable checkpoint files."""


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes or an unparseable config block."""


class CheckpointVersionError(CheckpointError):
    """Recognized file, unsupported format version."""


class CheckpointCountError(CheckpointError):
    """Declared, stored and config-implied parameter counts disagree."""


@dataclass
class Checkpoint:
    encoder_config: EncoderConfig
    params: np.ndarray                      # flat float32, little-endian order
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def __post_init__(self):
        self.params = np.ascontiguousarray(self.params, dtype="<f4").reshape(-1)
        expect = self.encoder_config.param_count()
        if self.params.size != expect:
            raise CheckpointCountError(
                f"config implies {expect} parameters, got {self.params.size}")

    def to_encoder(self, dtype=np.float32) -> Encoder:
        enc = Encoder(self.encoder_config, seed=0, dtype=dtype)
        enc.set_flat_params(self.params)
        return enc

    @classmethod
    def from_encoder(cls, encoder: Encoder, metadata: dict | None = None) -> "Checkpoint":
        return cls(encoder_config=encoder.config,
                   params=encoder.get_flat_params(),
                   metadata=dict(metadata or {}))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    config_block = json.dumps(
        {"encoder": ckpt.encoder_config.to_dict(), "metadata": ckpt.metadata},
        sort_keys=True).encode("utf-8")
    payload = ckpt.params.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", ckpt.version))
        fh.write(struct.pack("<I", len(config_block)))
        fh.write(config_block)
        fh.write(struct.pack("<Q", ckpt.params.size))
        fh.write(payload)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint file (bad magic)")
    version, block_len = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: version {version}, expected {FORMAT_VERSION}")
    block_end = 12 + block_len
    if len(data) < block_end + 8:
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        block = json.loads(data[12:block_end].decode("utf-8"))
        enc_cfg = EncoderConfig.from_dict(block["encoder"])
        metadata = block.get("metadata", {})
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"{path}: bad config block: {exc}") from exc
    (count,) = struct.unpack_from("<Q", data, block_end)
    payload = data[block_end + 8:]
    if len(payload) != count * 4:
        raise CheckpointCountError(
            f"{path}: header declares {count} parameters, payload holds {len(payload) // 4}")
    params = np.frombuffer(payload, dtype="<f4")
    if count != enc_cfg.param_count():
        raise CheckpointCountError(
            f"{path}: config implies {enc_cfg.param_count()} parameters, file has {count}")
    return Checkpoint(encoder_config=enc_cfg, params=params.copy(),
                      metadata=metadata, version=version)
