"""Versioned binary checkpoints with bit-exact round trips.

Layout (little-endian throughout):

    magic b"MRDP" | version uint32 | header_len uint64 | header JSON (utf-8)
    | raw array payload | crc32 uint32 over everything before it

The JSON header carries the variant, counters, config hash, RNG state and an
array manifest (name, dtype, shape, offset). A truncated or bit-flipped file
fails the length/CRC check and is rejected outright; a version mismatch is
refused with both versions named, never migrated silently.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MRDP"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Base class for checkpoint persistence failures."""


class IntegrityError(CheckpointError):
    """Checkpoint file is truncated or corrupted."""


class VersionError(CheckpointError):
    """Checkpoint format version is not the one this build writes."""


@dataclass
class Checkpoint:
    variant: str
    epoch: int
    episodes_seen: int
    config_hash: str
    rng_state: dict
    arrays: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _encode_rng_state(state: dict) -> dict:
    """PCG64 state contains 128-bit ints; stringify for JSON."""
    return {
        "bit_generator": state["bit_generator"],
        "state": {k: str(v) for k, v in state["state"].items()},
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def _decode_rng_state(raw: dict) -> dict:
    return {
        "bit_generator": raw["bit_generator"],
        "state": {k: int(v) for k, v in raw["state"].items()},
        "has_uint32": int(raw["has_uint32"]),
        "uinteger": int(raw["uinteger"]),
    }


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    manifest = []
    offset = 0
    payload = []
    for name in sorted(ckpt.arrays):
        arr = np.ascontiguousarray(ckpt.arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        manifest.append({"name": name, "dtype": arr.dtype.str,
                         "shape": list(arr.shape), "offset": offset,
                         "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({
        "variant": ckpt.variant,
        "epoch": int(ckpt.epoch),
        "episodes_seen": int(ckpt.episodes_seen),
        "config_hash": ckpt.config_hash,
        "rng_state": _encode_rng_state(ckpt.rng_state),
        "arrays": manifest,
    }, sort_keys=True).encode()
    body = (MAGIC + struct.pack("<I", FORMAT_VERSION)
            + struct.pack("<Q", len(header)) + header + b"".join(payload))
    blob = body + struct.pack("<I", zlib.crc32(body))
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 4 + 8 + 4:
        raise IntegrityError(f"{path}: file too short to be a checkpoint")
    body, crc_raw = blob[:-4], blob[-4:]
    if struct.unpack("<I", crc_raw)[0] != zlib.crc32(body):
        raise IntegrityError(f"{path}: CRC mismatch, file is corrupted")
    if body[:4] != MAGIC:
        raise IntegrityError(f"{path}: bad magic bytes")
    version = struct.unpack("<I", body[4:8])[0]
    if version != FORMAT_VERSION:
        raise VersionError(
            f"{path}: checkpoint format version {version}, this build "
            f"reads version {FORMAT_VERSION}")
    header_len = struct.unpack("<Q", body[8:16])[0]
    header_end = 16 + header_len
    if header_end > len(body):
        raise IntegrityError(f"{path}: truncated header")
    header = json.loads(body[16:header_end].decode())
    payload = body[header_end:]
    arrays = {}
    for entry in header["arrays"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise IntegrityError(f"{path}: truncated array payload")
        arr = np.frombuffer(payload[start:start + nbytes],
                            dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return Checkpoint(
        variant=header["variant"],
        epoch=header["epoch"],
        episodes_seen=header["episodes_seen"],
        config_hash=header["config_hash"],
        rng_state=_decode_rng_state(header["rng_state"]),
        arrays=arrays,
        version=version,
    )


def checkpoint_from_trainer(trainer, config_hash: str) -> Checkpoint:
    return Checkpoint(
        variant=trainer.variant,
        epoch=trainer.epoch,
        episodes_seen=trainer.episodes_seen,
        config_hash=config_hash,
        rng_state=trainer.rng.bit_generator.state,
        arrays=trainer.to_arrays(),
    )


def restore_trainer(trainer, ckpt: Checkpoint, config_hash: str):
    if ckpt.config_hash != config_hash:
        raise CheckpointError(
            "checkpoint was produced by a different configuration "
            f"(hash {ckpt.config_hash[:12]}.. vs {config_hash[:12]}..); "
            "refusing to resume")
    if ckpt.variant != trainer.variant:
        raise CheckpointError(
            f"checkpoint variant '{ckpt.variant}' does not match trainer "
            f"variant '{trainer.variant}'")
    trainer.load_arrays(ckpt.arrays, ckpt.epoch, ckpt.episodes_seen,
                        ckpt.rng_state)
    return trainer
