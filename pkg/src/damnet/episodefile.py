"""Length-prefixed binary episode records for offline inspection.

Layout (little-endian): magic "DAMD", u16 version, u32 episode count,
then per episode: u32 T, u32 d_i, u32 d_o, float32 inputs [T, d_i],
float32 targets [T, d_o], and the story / answer / sample masks as u8[T].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"DAMD"
VERSION = 1


class EpisodeFileError(ValueError):
    pass


@dataclass
class EpisodeRecord:
    inputs: np.ndarray
    targets: np.ndarray
    story: np.ndarray
    answer: np.ndarray
    sample: np.ndarray


def write_episodes(path, batches):
    """Serialize one EpisodeBatch, or a list of them, of dense episodes."""
    if not isinstance(batches, (list, tuple)):
        batches = [batches]
    total = 0
    for batch in batches:
        if batch.inputs.ndim != 3:
            raise EpisodeFileError("only dense vector episodes can be serialized")
        total += batch.batch_size
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<H", VERSION)
    blob += struct.pack("<I", total)
    for batch in batches:
        d_i = batch.inputs.shape[2]
        d_o = batch.targets.shape[2]
        for b in range(batch.batch_size):
            mask = batch.masks[b]
            t_b = mask.T
            blob += struct.pack("<III", t_b, d_i, d_o)
            blob += batch.inputs[b, :t_b].astype("<f4").tobytes()
            blob += batch.targets[b, :t_b].astype("<f4").tobytes()
            sample = mask.sample if mask.sample is not None else np.zeros(t_b, dtype=np.uint8)
            blob += mask.story.astype(np.uint8).tobytes()
            blob += mask.answer.astype(np.uint8).tobytes()
            blob += sample.astype(np.uint8).tobytes()
    Path(path).write_bytes(bytes(blob))


def read_episodes(path):
    data = Path(path).read_bytes()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(data):
            raise EpisodeFileError("truncated episode file")
        out = data[off:off + n]
        off += n
        return out

    if take(4) != MAGIC:
        raise EpisodeFileError("bad magic; not an episode file")
    (version,) = struct.unpack("<H", take(2))
    if version != VERSION:
        raise EpisodeFileError(f"unsupported episode file version {version}")
    (count,) = struct.unpack("<I", take(4))
    episodes = []
    for _ in range(count):
        t_b, d_i, d_o = struct.unpack("<III", take(12))
        inputs = np.frombuffer(take(4 * t_b * d_i), dtype="<f4").reshape(t_b, d_i)
        targets = np.frombuffer(take(4 * t_b * d_o), dtype="<f4").reshape(t_b, d_o)
        story = np.frombuffer(take(t_b), dtype=np.uint8)
        answer = np.frombuffer(take(t_b), dtype=np.uint8)
        sample = np.frombuffer(take(t_b), dtype=np.uint8)
        episodes.append(EpisodeRecord(inputs=inputs.copy(), targets=targets.copy(),
                                      story=story.copy(), answer=answer.copy(),
                                      sample=sample.copy()))
    if off != len(data):
        raise EpisodeFileError("trailing bytes after episode payload")
    return episodes
