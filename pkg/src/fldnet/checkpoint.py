"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"FLDN"  u32 version
    u32 entry count
    per entry: u16 name length, name (utf-8), u8 dtype code, u8 ndim, u32 * ndim extents
    payloads, in table order, packed back to back

Float tensors are stored as float32.  Scalar state (configs, step counters,
RNG states, the loss history) is a JSON document carried in the ``meta.json``
entry as raw uint8 bytes.
"""
from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from .encoder import EncoderConfig
from .model import LCMConfig, ModelConfig
from .train import LossRecord, TrainConfig, Trainer

MAGIC = b"FLDN"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
CODES = {np.dtype("<f4"): 0, np.dtype("u1"): 1}
META = "meta.json"


class CheckpointError(ValueError):
    pass


def write_tensors(path, tensors: list[tuple[str, np.ndarray]]) -> None:
    names = [n for n, _ in tensors]
    if len(set(names)) != len(names):
        raise CheckpointError("name-table collision: duplicate tensor names")
    header = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    payload = []
    for name, arr in tensors:
        arr = np.asarray(arr)
        arr = arr.astype("u1") if arr.dtype == np.uint8 else arr.astype("<f4")
        raw = name.encode("utf-8")
        header.append(struct.pack("<H", len(raw)) + raw)
        header.append(struct.pack("<BB", CODES[arr.dtype], arr.ndim))
        header.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload.append(np.ascontiguousarray(arr).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(header + payload))


def read_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not an FLDN checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    table = []
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        table.append((name, DTYPES[code], shape))
    out = {}
    for name, dtype, shape in table:
        if name in out:
            raise CheckpointError(f"{path}: name-table collision on {name!r}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        out[name] = np.frombuffer(take(nbytes), dtype=dtype).reshape(shape).copy()
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes after payloads")
    return out


def _model_config_dict(cfg: ModelConfig) -> dict:
    return dataclasses.asdict(cfg)


def _model_config_from(d: dict) -> ModelConfig:
    return ModelConfig(encoder=EncoderConfig(**d["encoder"]), lcm=LCMConfig(**d["lcm"]),
                       head_width=d["head_width"])


def save_checkpoint(path, trainer: Trainer) -> None:
    opt = trainer.optimizer.state
    meta = {
        "format": VERSION,
        "model_config": _model_config_dict(trainer.model_config),
        "train_config": dataclasses.asdict(trainer.config),
        "epoch": trainer.epoch,
        "step": trainer.step,
        "adam": {"t": opt.t, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps},
        "rng": {"shuffle": trainer.shuffle_rng.bit_generator.state,
                "augment": trainer.augment_rng.bit_generator.state},
        "history": [[r.step, r.epoch, r.lr, r.loss] for r in trainer.history],
    }
    raw = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tensors = [(META, np.frombuffer(raw, dtype=np.uint8))]
    for name, p in trainer.model.named_parameters():
        tensors.append((f"param.{name}", p.data))
    for name, _ in trainer.model.named_parameters():
        tensors.append((f"adam.m.{name}", opt.m[name]))
        tensors.append((f"adam.v.{name}", opt.v[name]))
    write_tensors(path, tensors)


def load_checkpoint(path) -> Trainer:
    table = read_tensors(path)
    if META not in table:
        raise CheckpointError(f"{path}: missing {META} entry")
    meta = json.loads(table[META].tobytes().decode("utf-8"))
    trainer = Trainer(TrainConfig(**meta["train_config"]), _model_config_from(meta["model_config"]))
    params = {}
    for name, _ in trainer.model.named_parameters():
        key = f"param.{name}"
        if key not in table:
            raise CheckpointError(f"{path}: missing tensor {key}")
        params[name] = table[key]
    trainer.model.load_state_dict(params)
    opt = trainer.optimizer.state
    for name, p in trainer.model.named_parameters():
        opt.m[name] = table[f"adam.m.{name}"].astype(p.data.dtype)
        opt.v[name] = table[f"adam.v.{name}"].astype(p.data.dtype)
    opt.t = meta["adam"]["t"]
    opt.beta1, opt.beta2, opt.eps = meta["adam"]["beta1"], meta["adam"]["beta2"], meta["adam"]["eps"]
    trainer.shuffle_rng.bit_generator.state = meta["rng"]["shuffle"]
    trainer.augment_rng.bit_generator.state = meta["rng"]["augment"]
    trainer.epoch = meta["epoch"]
    trainer.step = meta["step"]
    trainer.history = [LossRecord(*row) for row in meta["history"]]
    return trainer
