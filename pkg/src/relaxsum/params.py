"""Flat parameter stores with named block views, plus JSON checkpoints."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Mapping

import numpy as np

CHECKPOINT_FORMAT = "relaxsum-checkpoint"
CHECKPOINT_VERSION = 1


class ParamStore:
    """Named parameter blocks backed by one contiguous float64 vector.

    ``store["U"]`` is a writable view into ``store.data``; ``store.grad`` is a
    congruent accumulator. Optimizers work on the flat vectors directly.
    """

    def __init__(self, shapes: Mapping[str, tuple[int, ...]]):
        self.shapes = {k: tuple(int(s) for s in v) for k, v in shapes.items()}
        self.offsets = {}
        off = 0
        for name, shape in self.shapes.items():
            n = math.prod(shape)
            self.offsets[name] = (off, off + n)
            off += n
        self.size = off
        self.data = np.zeros(off)
        self.grad = np.zeros(off)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.view(self.data)[name]

    def __setitem__(self, name: str, value) -> None:
        self[name][...] = value

    def names(self):
        return list(self.shapes)

    def view(self, vec: np.ndarray) -> dict[str, np.ndarray]:
        """Split a flat ``(..., size)`` array into named block views."""
        if vec.shape[-1] != self.size:
            raise ValueError(f"expected trailing dimension {self.size}, got {vec.shape[-1]}")
        lead = vec.shape[:-1]
        return {name: vec[..., a:b].reshape(lead + self.shapes[name])
                for name, (a, b) in self.offsets.items()}

    def zero_grad(self) -> None:
        self.grad[:] = 0.0

    def copy(self) -> "ParamStore":
        out = ParamStore(self.shapes)
        out.data[:] = self.data
        out.grad[:] = self.grad
        return out

    def to_dict(self) -> dict:
        return {name: {"shape": list(self.shapes[name]), "data": self[name].ravel().tolist()}
                for name in self.shapes}

    def load_dict(self, blocks: Mapping[str, dict]) -> None:
        if set(blocks) != set(self.shapes):
            raise ValueError(f"checkpoint blocks {sorted(blocks)} do not match {sorted(self.shapes)}")
        for name, blk in blocks.items():
            if tuple(blk["shape"]) != self.shapes[name]:
                raise ValueError(f"block {name!r}: shape {tuple(blk['shape'])} != {self.shapes[name]}")
            arr = np.asarray(blk["data"], dtype=np.float64)
            if arr.size != math.prod(self.shapes[name]):
                raise ValueError(f"block {name!r}: wrong number of values")
            self[name] = arr.reshape(self.shapes[name])
        if not np.all(np.isfinite(self.data)):
            raise ValueError("checkpoint contains non-finite values")


def save_checkpoint(path: str | Path, stores: Mapping[str, ParamStore], meta: Mapping | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": dict(meta or {}),
        "stores": {name: s.to_dict() for name, s in stores.items()},
    }
    Path(path).write_text(json.dumps(doc))


def read_checkpoint(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    return doc
