"""Binary checkpoint files.

Layout: ``b"FSTC"``, u32 LE version (1), u32 LE metadata length, UTF-8 JSON
metadata, then every parameter as little-endian float64 in declared order.
The JSON is written with sorted keys and fixed separators so that
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, FstcError
from .ndcore import ParamSet
from .nnmodel import Model, ModelConfig

MAGIC = b"FSTC"
VERSION = 1
_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class Checkpoint:
    model: Model
    fingerprint: str
    command: str
    seed: int

    def metadata(self) -> dict:
        return {
            "model_config": self.model.config.to_dict(),
            "params": [{"name": n, "shape": list(s)} for n, s in zip(self.model.params.names, self.model.params.shapes)],
            "corpus_fingerprint": self.fingerprint,
            "command": self.command,
            "seed": self.seed,
        }


def encode(ckpt: Checkpoint) -> bytes:
    meta = json.dumps(ckpt.metadata(), sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    payload = b"".join(np.asarray(t.data, dtype="<f8").tobytes(order="C") for t in ckpt.model.params.tensors)
    return _HEADER.pack(MAGIC, VERSION, len(meta)) + meta + payload


def decode(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"{source}: file too short for a checkpoint header")
    magic, version, meta_len = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}, not a checkpoint")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version} (expected {VERSION})")
    start = _HEADER.size
    if start + meta_len > len(blob):
        raise CheckpointError(f"{source}: metadata length {meta_len} runs past end of file")
    try:
        meta = json.loads(blob[start : start + meta_len].decode("utf-8"))
        config = ModelConfig(**meta["model_config"])
        specs = [(p["name"], tuple(int(d) for d in p["shape"])) for p in meta["params"]]
        fp, command, seed = meta["corpus_fingerprint"], meta["command"], int(meta["seed"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError, FstcError) as exc:
        raise CheckpointError(f"{source}: malformed checkpoint metadata: {exc}") from exc
    payload = memoryview(blob)[start + meta_len :]
    sizes = [int(np.prod(shape)) for _, shape in specs]
    if len(payload) != 8 * sum(sizes):
        raise CheckpointError(
            f"{source}: payload holds {len(payload)} bytes, declared parameters need {8 * sum(sizes)}"
        )
    entries, offset = [], 0
    for (name, shape), size in zip(specs, sizes):
        values = np.frombuffer(payload, dtype="<f8", count=size, offset=offset).astype(np.float64)
        entries.append((name, values.reshape(shape)))
        offset += 8 * size
    try:
        model = Model(config, ParamSet.leaves(entries))
    except FstcError as exc:
        raise CheckpointError(f"{source}: parameters disagree with the stored model config: {exc}") from exc
    return Checkpoint(model, fp, command, seed)


def save(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode(ckpt))
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(blob, str(path))


def require_fingerprint(ckpt: Checkpoint, expected: str, source: str = "checkpoint") -> None:
    if ckpt.fingerprint != expected:
        raise CheckpointError(
            f"{source} was built on corpus fingerprint {ckpt.fingerprint[:12]}..., "
            f"current data has {expected[:12]}...; refusing to mix featurizations"
        )
