"""Single-file checkpoint container.

Layout (little-endian)::

    b"DFCK" | u32 version | u32 n_records
    n_records x ( u32 name_len | name utf-8 | u64 rec_len | DFTN record )
    u64 json_len | JSON trailer (config, heads, manifest of per-record CRC32s, extra)
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Optional

import numpy as np

from .autograd.serialize import TensorFormatError, tensor_from_bytes, tensor_to_bytes
from .cell import AlphaTable
from .model import ModelConfig, SequenceModel

MAGIC = b"DFCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def model_state(model: SequenceModel) -> dict:
    state = {}
    for name, p in model.named_parameters():
        state["param:" + name] = p.data
    for name, b in model.named_buffers():
        state["buffer:" + name] = b
    if model.alphas is not None:
        state["alpha"] = model.alphas.values
        state["mask"] = model.alphas.mask.astype(np.float64)
    return state


def checkpoint_bytes(model: SequenceModel, extra: Optional[dict] = None) -> bytes:
    state = model_state(model)
    body = bytearray(MAGIC + struct.pack("<II", VERSION, len(state)))
    manifest = {}
    for name, arr in state.items():
        rec = tensor_to_bytes(arr)
        nb = name.encode("utf-8")
        body += struct.pack("<I", len(nb)) + nb + struct.pack("<Q", len(rec)) + rec
        manifest[name] = zlib.crc32(rec) & 0xFFFFFFFF
    trailer = {
        "model_config": model.config.to_dict(),
        "seed": model.seed,
        "heads": [{"task_id": k, "vocab": model.heads[k].vocab} for k in model.heads.keys()],
        "manifest": manifest,
        "extra": extra or {},
    }
    tb = json.dumps(trailer, sort_keys=True).encode("utf-8")
    body += struct.pack("<Q", len(tb)) + tb
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    return bytes(body)


def save_checkpoint(model: SequenceModel, path, extra: Optional[dict] = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, extra))


def parse_checkpoint(buf: bytes) -> tuple:
    """Decode into ``(records, trailer)``; validates every checksum."""
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint checksum mismatch")
    version, n = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    records = {}
    try:
        for _ in range(n):
            (nl,) = struct.unpack_from("<I", buf, pos)
            name = buf[pos + 4:pos + 4 + nl].decode("utf-8")
            pos += 4 + nl
            (rl,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            arr, end = tensor_from_bytes(buf[pos:pos + rl])
            records[name] = (arr, zlib.crc32(buf[pos:pos + rl]) & 0xFFFFFFFF)
            pos += rl
        (tl,) = struct.unpack_from("<Q", buf, pos)
        trailer = json.loads(buf[pos + 8:pos + 8 + tl].decode("utf-8"))
    except (struct.error, TensorFormatError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    for name, (_, c) in records.items():
        if trailer["manifest"].get(name) != c:
            raise CheckpointError(f"record {name!r} does not match manifest")
    return {k: v for k, (v, _) in records.items()}, trailer


def load_checkpoint(path_or_bytes) -> tuple:
    """Rebuild ``(model, extra)`` from a checkpoint file or its bytes."""
    buf = path_or_bytes if isinstance(path_or_bytes, (bytes, bytearray)) else Path(path_or_bytes).read_bytes()
    records, trailer = parse_checkpoint(bytes(buf))
    config = ModelConfig.from_dict(trailer["model_config"])
    model = SequenceModel(config, seed=trailer["seed"])
    for head in trailer["heads"]:
        model.add_head(head["task_id"], head["vocab"])
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    expected = {"param:" + k for k in params} | {"buffer:" + k for k in buffers}
    missing = sorted(expected - set(records))
    if missing:
        raise CheckpointError(f"checkpoint lacks {len(missing)} record(s), e.g. {missing[0]!r}")
    if (model.alphas is not None) != ("alpha" in records and "mask" in records):
        raise CheckpointError("architecture parameters do not match the model frontend")
    for name, arr in records.items():
        kind, _, key = name.partition(":")
        if kind == "param":
            target = params.get(key)
        elif kind == "buffer":
            target = buffers.get(key)
        else:
            continue
        if target is None:
            raise CheckpointError(f"checkpoint record {name!r} has no slot in the model")
        dst = target.data if kind == "param" else target
        if dst.shape != arr.shape:
            raise CheckpointError(f"{name}: shape {arr.shape} != model {dst.shape}")
        np.copyto(dst, arr)
    if "alpha" in records:
        k = config.cell.k
        model.cell.alphas = AlphaTable(k, len(config.cell.candidates), records["alpha"], records["mask"] > 0.5)
    return model, trailer.get("extra", {})
