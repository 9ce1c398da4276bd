"""Checkpoint file: hyperparameters, named float64 tensors, optimizer moments, RNG state.

Layout::

    b"CRIACKPT"  u16 version  u64 header_len
    header (UTF-8 JSON, sorted keys): meta + tensor table of (name, shape, offset)
    tensor payload, little-endian float64, in table order

Serialization is canonical, so save -> load -> save reproduces the same bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import EncoderParams
from .errors import CheckpointError
from .finetune import HeadParams
from .optim import Adam, TrainState

MAGIC = b"CRIACKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sHQ")


@dataclass
class Checkpoint:
    encoder: dict  # encoder hyperparameters
    tensors: dict  # name -> float64 array (encoder, head, optimizer moments)
    step: int = 0
    adam_t: int = 0
    head: dict | None = None  # head hyperparameters
    rng_state: dict | None = None
    meta: dict = field(default_factory=dict)  # free-form run settings

    def to_bytes(self):
        table, offset, chunks = [], 0, []
        for name in sorted(self.tensors):
            arr = np.ascontiguousarray(self.tensors[name], dtype="<f8")
            table.append({"name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(arr.tobytes())
            offset += arr.nbytes
        header = {
            "encoder": self.encoder,
            "head": self.head,
            "step": self.step,
            "adam_t": self.adam_t,
            "rng_state": self.rng_state,
            "meta": self.meta,
            "tensors": table,
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return _PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(chunks)

    @classmethod
    def from_bytes(cls, buf):
        if len(buf) < _PREFIX.size:
            raise CheckpointError("file too short to be a checkpoint")
        magic, version, n = _PREFIX.unpack_from(buf)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        if version != VERSION:
            raise CheckpointError(f"checkpoint version {version} is not supported (expected {VERSION})")
        start = _PREFIX.size + n
        try:
            header = json.loads(buf[_PREFIX.size : start].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
        tensors = {}
        for entry in header["tensors"]:
            count = int(np.prod(entry["shape"], dtype=np.int64))
            lo = start + entry["offset"]
            if lo + 8 * count > len(buf):
                raise CheckpointError(f"tensor {entry['name']!r} runs past the end of the file")
            tensors[entry["name"]] = np.frombuffer(buf, "<f8", count, lo).reshape(entry["shape"]).astype(np.float64)
        total = sum(8 * int(np.prod(e["shape"], dtype=np.int64)) for e in header["tensors"])
        if start + total != len(buf):
            raise CheckpointError(f"payload is {len(buf) - start} bytes, table declares {total}")
        return cls(header["encoder"], tensors, header["step"], header["adam_t"], header["head"],
                   header["rng_state"], header["meta"])

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        try:
            with open(path, "rb") as fh:
                return cls.from_bytes(fh.read())
        except FileNotFoundError:
            raise CheckpointError(f"checkpoint not found: {path}") from None


def from_state(state: TrainState, meta=None) -> Checkpoint:
    tensors = {k: t.data for k, t in state.params.tensors.items()}
    head = None
    if state.head is not None:
        head = state.head.hyper()
        tensors.update({k: t.data for k, t in state.head.tensors.items()})
    tensors.update(state.optimizer.state_arrays())
    return Checkpoint(
        encoder=state.params.hyper(),
        tensors=tensors,
        step=state.step,
        adam_t=state.optimizer.t,
        head=head,
        rng_state=state.rng.bit_generator.state,
        meta=dict(meta or {}),
    )


def _restore(names, ckpt):
    out = {}
    for name in names:
        if name not in ckpt.tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        out[name] = T.Tensor(ckpt.tensors[name].copy(), True, name)
    return out


def encoder_from(ckpt: Checkpoint) -> EncoderParams:
    e = ckpt.encoder
    template = EncoderParams.init(e["d"], e["n_heads"], e["n_layers"], e["c_max"], e["ffn_mult"],
                                  np.random.default_rng(0), e["ln_eps"])
    template.tensors = _restore(template.tensors, ckpt)
    return template


def head_from(ckpt: Checkpoint) -> HeadParams | None:
    if ckpt.head is None:
        return None
    h = ckpt.head
    template = HeadParams.init(h["d"], h["num_classes"], h["hidden"], h["dropout"], np.random.default_rng(0),
                               h["out_dim"])
    template.tensors = _restore(template.tensors, ckpt)
    return template


def state_from(ckpt: Checkpoint, lr=1e-3, betas=(0.9, 0.999)) -> TrainState:
    """Rebuild the full training state (parameters, Adam moments, RNG, step)."""
    params = encoder_from(ckpt)
    head = head_from(ckpt)
    named = dict(params.tensors)
    if head is not None:
        named.update(head.tensors)
    opt = Adam(named, lr, betas)
    opt.load_state_arrays(ckpt.tensors, ckpt.adam_t)
    rng = np.random.default_rng()
    if ckpt.rng_state is not None:
        rng.bit_generator.state = ckpt.rng_state
    return TrainState(params, opt, rng, ckpt.step, head)
