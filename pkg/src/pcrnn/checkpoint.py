"""Binary checkpoints: model config, normalisation, parameters and optional Adam state.

Layout (all integers little-endian)::

    8 bytes   magic b"PCRNNCKP"
    u32       format version
    u32       header length H
    H bytes   UTF-8 JSON header
    ...       raw tensor data, in header order, at the recorded offsets

Tensors are stored as little-endian 32-bit floats, or 64-bit floats for
models configured with ``dtype="float64"``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data.dataset import Normalizer
from .errors import CheckpointError
from .model import PCRNN, ModelConfig
from .optim import Adam, AdamState

MAGIC = b"PCRNNCKP"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    t_min: float
    t_max: float
    task: str = "main"
    seed: int = 0
    optimizer: AdamState | None = None
    clip: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def normalizer(self) -> Normalizer:
        return Normalizer(self.t_min, self.t_max)

    @classmethod
    def from_model(cls, model: PCRNN, normalizer: Normalizer, task: str = "main", seed: int = 0,
                   optimizer: Adam | None = None, extra: dict | None = None) -> "Checkpoint":
        state = None
        clip = None
        if optimizer is not None:
            s = optimizer.state
            state = AdamState(s.lr, s.beta1, s.beta2, s.eps, s.step,
                              {k: v.copy() for k, v in s.m.items()}, {k: v.copy() for k, v in s.v.items()})
            clip = optimizer.clip
        return cls(ModelConfig.from_dict(model.config.to_dict()), model.state_dict(), normalizer.t_min,
                   normalizer.t_max, task, seed, state, clip, dict(extra or {}))

    def build_model(self) -> PCRNN:
        model = PCRNN(ModelConfig.from_dict(self.config.to_dict()), seed=self.seed)
        model.load_state_dict(self.params)
        return model

    def build_optimizer(self, model: PCRNN) -> Adam:
        if self.optimizer is None:
            raise CheckpointError("checkpoint carries no optimizer state")
        s = self.optimizer
        opt = Adam(model.named_parameters(), s.lr, s.beta1, s.beta2, s.eps, self.clip)
        opt.state.step = s.step
        for name in opt.params:
            opt.state.m[name][...] = s.m[name]
            opt.state.v[name][...] = s.v[name]
        return opt


def _tensor_blocks(ckpt: Checkpoint):
    blocks = [("param", name, values) for name, values in ckpt.params.items()]
    if ckpt.optimizer is not None:
        blocks += [("adam_m", name, values) for name, values in ckpt.optimizer.m.items()]
        blocks += [("adam_v", name, values) for name, values in ckpt.optimizer.v.items()]
    return blocks


def save_checkpoint(path, ckpt: Checkpoint):
    dtype = np.dtype(ckpt.config.dtype).newbyteorder("<")
    index, chunks, offset = [], [], 0
    for kind, name, values in _tensor_blocks(ckpt):
        raw = np.ascontiguousarray(values, dtype=dtype).tobytes()
        index.append({"kind": kind, "name": name, "shape": list(np.shape(values)), "offset": offset,
                      "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    opt = None
    if ckpt.optimizer is not None:
        s = ckpt.optimizer
        opt = {"lr": s.lr, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps, "step": s.step, "clip": ckpt.clip}
    header = {
        "config": ckpt.config.to_dict(),
        "normalization": {"t_min": ckpt.t_min, "t_max": ckpt.t_max},
        "vocabulary": {"task": ckpt.task, "size": ckpt.config.vocab},
        "seed": ckpt.seed,
        "dtype": dtype.str,
        "tensors": index,
        "optimizer": opt,
        "extra": ckpt.extra,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version}, expected {VERSION}")
    try:
        header = json.loads(data[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    body = memoryview(data)[_PREFIX.size + hlen:]
    dtype = np.dtype(header["dtype"])
    config = ModelConfig.from_dict(header["config"])
    blocks = {"param": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["tensors"]:
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        if stop > len(body):
            raise CheckpointError(f"{path}: tensor {entry['name']} runs past end of file")
        arr = np.frombuffer(body[start:stop], dtype=dtype).reshape(entry["shape"])
        blocks[entry["kind"]][entry["name"]] = arr.astype(config.np_dtype)
    opt, clip = None, None
    if header["optimizer"] is not None:
        o = header["optimizer"]
        opt = AdamState(o["lr"], o["beta1"], o["beta2"], o["eps"], o["step"], blocks["adam_m"], blocks["adam_v"])
        clip = o["clip"]
    norm = header["normalization"]
    return Checkpoint(config, blocks["param"], norm["t_min"], norm["t_max"], header["vocabulary"]["task"],
                      header["seed"], opt, clip, header.get("extra", {}))
