"""The .cfck checkpoint container.

Layout: ``CFCK`` magic, u16 version (1), u32 manifest length, a UTF-8 JSON
manifest, then every tensor as little-endian float32 in manifest order. The
manifest indexes each tensor by name, shape, byte offset (relative to the
start of the payload) and byte length.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .denoiser import DenoiserConfig, ParamStore
from .errors import BadMagicError, FormatError, TruncatedError, VersionError

MAGIC = b"CFCK"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


@dataclass
class Checkpoint:
    denoiser: DenoiserConfig
    schedule: dict
    train: dict
    step: int
    params: ParamStore
    moments: dict = field(default_factory=dict)   # {"m": ParamStore, "v": ParamStore}


def _tensors(ckpt: Checkpoint):
    yield from ckpt.params.items()
    for kind in ("m", "v"):
        if kind in ckpt.moments:
            for name, value in ckpt.moments[kind].items():
                yield f"adam.{kind}/{name}", value


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    index, payloads, offset = [], [], 0
    for name, value in _tensors(ckpt):
        raw = value.detach().cpu().numpy().astype("<f4").tobytes()
        index.append({"name": name, "shape": list(value.shape), "offset": offset,
                      "length": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    manifest = {
        "denoiser": ckpt.denoiser.to_dict(),
        "schedule": ckpt.schedule,
        "train": ckpt.train,
        "step": int(ckpt.step),
        "tensors": index,
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([_PREFIX.pack(MAGIC, VERSION, len(blob)), blob, *payloads])


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("not a .cfck checkpoint (bad magic)")
    if len(data) < _PREFIX.size:
        raise TruncatedError("truncated .cfck header")
    _, version, mlen = _PREFIX.unpack_from(data)
    if version != VERSION:
        raise VersionError(f"unsupported .cfck version {version}")
    if len(data) < _PREFIX.size + mlen:
        raise TruncatedError("truncated .cfck manifest")
    try:
        manifest = json.loads(data[_PREFIX.size:_PREFIX.size + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable .cfck manifest: {exc}") from exc
    base = _PREFIX.size + mlen
    params, moments = ParamStore(), {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        start, length = base + entry["offset"], entry["length"]
        if length != 4 * int(np.prod(shape, dtype=np.int64)):
            raise FormatError(f"tensor {entry['name']}: length does not match shape")
        if start + length > len(data):
            raise TruncatedError(f"tensor {entry['name']} payload is truncated")
        arr = np.frombuffer(data, dtype="<f4", count=length // 4, offset=start)
        value = torch.from_numpy(arr.astype(np.float32).reshape(shape))
        name = entry["name"]
        if name.startswith("adam."):
            kind, pname = name[5:].split("/", 1)
            moments.setdefault(kind, ParamStore())[pname] = value
        else:
            params[name] = value
    return Checkpoint(
        denoiser=DenoiserConfig(**manifest["denoiser"]),
        schedule=manifest["schedule"],
        train=manifest["train"],
        step=manifest["step"],
        params=params,
        moments=moments,
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
