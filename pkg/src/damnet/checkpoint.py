"""Versioned binary checkpoints: config, RNG streams, parameters, optimizer.

Layout (little-endian): magic "DAMC", u16 format version, length-prefixed
config JSON plus its sha256, u64 iteration, length-prefixed RNG-state
JSON, then named float64 arrays with shape headers. Serialization is
fully deterministic (sorted names, canonical JSON), so save -> load ->
save reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DAMC"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated, or version-mismatched checkpoint file."""


class ConfigMismatchError(CheckpointError):
    """The checkpoint was produced under a different configuration."""


def _meta_from(record):
    cfg = record.model.cfg
    meta = dict(record.meta)
    meta.update({k: getattr(cfg, k) for k in
                 ("K", "A", "L", "R", "d_h", "d_i", "d_o", "p_dp", "p")})
    meta["lr"] = record.opt.lr
    return meta


def _canon(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def save_checkpoint(path, record):
    """Write atomically; an aborted save never clobbers the previous file."""
    path = Path(path)
    meta_json = _canon(_meta_from(record))
    rng_json = _canon({k: g.bit_generator.state for k, g in record.rngs.items()})

    arrays = {}
    for name, p in sorted(record.model.params.items()):
        arrays[f"p:{name}"] = p.data
        arrays[f"ms:{name}"] = record.opt.ms[name]
        arrays[f"mom:{name}"] = record.opt.mom[name]

    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<H", VERSION)
    blob += struct.pack("<I", len(meta_json)) + meta_json
    blob += hashlib.sha256(meta_json).digest()
    blob += struct.pack("<Q", record.iteration)
    blob += struct.pack("<I", len(rng_json)) + rng_json
    blob += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        nb = name.encode()
        blob += struct.pack("<H", len(nb)) + nb
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        blob += arr.tobytes()

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(bytes(blob))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.off = 0

    def take(self, n):
        if self.off + n > len(self.data):
            raise CheckpointError("truncated checkpoint file")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path):
    """Raw contents: (meta dict, iteration, rng states, named arrays)."""
    try:
        data = Path(path).read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint: {err}") from err
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = r.unpack("<I")
    meta_json = r.take(n)
    digest = r.take(32)
    if hashlib.sha256(meta_json).digest() != digest:
        raise CheckpointError("config block hash mismatch (corrupt file)")
    meta = json.loads(meta_json)
    (iteration,) = r.unpack("<Q")
    (n,) = r.unpack("<I")
    rng_states = json.loads(r.take(n))
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).copy()
    if r.off != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return meta, iteration, rng_states, arrays


def load_train_record(path, expect_cfg=None):
    """Rebuild a resumable TrainRecord; optionally verify the configuration."""
    from .config import ModelConfig
    from .tasks import task_spec
    from .trainer import RmsProp, TrainRecord, build_model, rng_streams

    meta, iteration, rng_states, arrays = read_checkpoint(path)
    cfg = ModelConfig(K=meta["K"], A=meta["A"], L=meta["L"], R=meta["R"],
                      d_h=meta["d_h"], d_i=meta["d_i"], d_o=meta["d_o"],
                      p_dp=meta["p_dp"], p=meta["p"])
    if expect_cfg is not None:
        for name in ("K", "A", "L", "R", "d_h", "d_i", "d_o"):
            got, want = getattr(cfg, name), getattr(expect_cfg, name)
            if got != want:
                raise ConfigMismatchError(
                    f"checkpoint has {name}={got}, requested {name}={want}")

    spec = task_spec(meta["task"], **meta.get("task_params", {}))
    model = build_model(spec, cfg, meta["seed"])
    opt = RmsProp(model.params, meta["lr"])
    for name, p in model.params.items():
        for prefix, target in (("p:", None), ("ms:", opt.ms), ("mom:", opt.mom)):
            key = prefix + name
            if key not in arrays:
                raise CheckpointError(f"checkpoint missing tensor {key!r}")
            if arrays[key].shape != p.data.shape:
                raise ConfigMismatchError(
                    f"tensor {key!r} has shape {arrays[key].shape}, "
                    f"expected {p.data.shape}")
            if target is None:
                p.data = arrays[key]
            else:
                target[name] = arrays[key]

    rngs = rng_streams(meta["seed"])
    for name, state in rng_states.items():
        rngs[name].bit_generator.state = state
    return TrainRecord(model=model, opt=opt, rngs=rngs,
                       iteration=iteration, meta=meta)
