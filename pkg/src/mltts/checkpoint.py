"""Versioned binary checkpoints with a whole-file SHA-256 trailer.

Layout (little endian)::

    b"MLTTSCKP"                      magic, 8 bytes
    u32 version
    u64 header length, header JSON   config, corpus spec, step, rng, optimizer meta
    u32 array count
    per array:
        u32 name length, name (utf-8)
        u32 ndim, ndim x u64 shape
        u64 byte length, float64 data (C order)
    32-byte SHA-256 of every preceding byte

Parameter arrays are named ``param/<registry name>``; optimizer buffers
``optim/<buffer>/<registry name>``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainingConfig
from .corpus import SyntheticCorpusSpec
from .model import MultilingualTTS
from .trainer import Adam, SGDMomentum, Trainer

MAGIC = b"MLTTSCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    model: MultilingualTTS
    step: int
    optimizer: SGDMomentum | Adam | None
    rng_state: dict


def _optimizer_arrays(opt) -> tuple[dict, dict[str, np.ndarray]]:
    if opt is None:
        return {"kind": None}, {}
    if isinstance(opt, Adam):
        arrays = {f"optim/m/{k}": v for k, v in opt.m.items()}
        arrays.update({f"optim/v/{k}": v for k, v in opt.v.items()})
        return {"kind": "adam", "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "t": opt.t}, arrays
    return {"kind": "sgd", "lr": opt.lr, "momentum": opt.momentum}, {f"optim/velocity/{k}": v for k, v in opt.velocity.items()}


def dumps_checkpoint(model: MultilingualTTS, step: int = 0, optimizer=None) -> bytes:
    opt_meta, opt_arrays = _optimizer_arrays(optimizer)
    header = {
        "config": model.config.to_dict(),
        "corpus_spec": model.corpus_spec.__dict__.copy(),
        "step": int(step),
        "rng": {"seed": model.config.seed, "next_step": int(step)},
        "optimizer": opt_meta,
    }
    arrays = {f"param/{k}": v.data for k, v in model.named_parameters().items()}
    arrays.update(opt_arrays)

    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    hb = json.dumps(header, sort_keys=True).encode()
    out += struct.pack("<Q", len(hb)) + hb
    out += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode()
        out += struct.pack("<I", len(nb)) + nb
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
        data = arr.tobytes()
        out += struct.pack("<Q", len(data)) + data
    out += hashlib.sha256(out).digest()
    return bytes(out)


def save_checkpoint(model: MultilingualTTS, path, step: int = 0, optimizer=None) -> None:
    Path(path).write_bytes(dumps_checkpoint(model, step, optimizer))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointIntegrityError("checkpoint is truncated")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads_checkpoint(buf: bytes) -> Checkpoint:
    if len(buf) < len(MAGIC) + 4 + 32:
        raise CheckpointIntegrityError("checkpoint is truncated")
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    (version,) = struct.unpack("<I", buf[len(MAGIC):len(MAGIC) + 4])
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version} is incompatible with reader version {VERSION}")
    body, digest = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointIntegrityError("checksum mismatch (truncated or modified checkpoint)")

    r = _Reader(body)
    r.take(len(MAGIC) + 4)
    (hlen,) = r.unpack("<Q")
    header = json.loads(r.take(hlen))
    (count,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        (dlen,) = r.unpack("<Q")
        if dlen != 8 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointIntegrityError(f"array {name}: {dlen} bytes do not match shape {shape}")
        arrays[name] = np.frombuffer(r.take(dlen), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(body):
        raise CheckpointIntegrityError("trailing bytes after the last array")

    config = TrainingConfig.from_dict(header["config"])
    model = MultilingualTTS(config, SyntheticCorpusSpec.from_dict(header["corpus_spec"]))
    registry = model.named_parameters()
    stored = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    if set(stored) != set(registry):
        missing = sorted(set(registry) - set(stored))
        extra = sorted(set(stored) - set(registry))
        raise CheckpointIntegrityError(f"parameter set mismatch (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, t in registry.items():
        if stored[name].shape != t.shape:
            raise CheckpointIntegrityError(f"{name}: stored shape {stored[name].shape} != expected {t.shape}")
    for name, t in registry.items():
        t.data = stored[name].copy()

    meta = header["optimizer"]
    optimizer = None
    if meta["kind"] == "sgd":
        optimizer = SGDMomentum(meta["lr"], meta["momentum"],
                                {k[len("optim/velocity/"):]: v for k, v in arrays.items() if k.startswith("optim/velocity/")})
    elif meta["kind"] == "adam":
        optimizer = Adam(meta["lr"], meta["beta1"], meta["beta2"], meta["eps"], meta["t"],
                         {k[len("optim/m/"):]: v for k, v in arrays.items() if k.startswith("optim/m/")},
                         {k[len("optim/v/"):]: v for k, v in arrays.items() if k.startswith("optim/v/")})
    return Checkpoint(model, int(header["step"]), optimizer, header["rng"])


def load_checkpoint_state(path) -> Checkpoint:
    return loads_checkpoint(Path(path).read_bytes())


def load_checkpoint(path) -> MultilingualTTS:
    return load_checkpoint_state(path).model


def resume_trainer(path, corpus) -> Trainer:
    """Rebuild a trainer that continues exactly where the checkpoint stopped."""
    ck = load_checkpoint_state(path)
    return Trainer(ck.model, corpus, step=ck.step, optimizer=ck.optimizer)
