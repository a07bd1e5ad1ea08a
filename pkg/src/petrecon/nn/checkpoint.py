"""Checkpoint serialization.

A checkpoint is a pair of sibling files derived from one stem:

  <stem>.f32   raw little-endian IEEE-754 float32 values, tensors
               concatenated in index order, row-major, no header
  <stem>.idx   UTF-8 text index: one ``meta = key value`` line per metadata
               entry, then one ``tensor = name HxWx... offset`` line per
               tensor with the byte offset into the .f32 blob

The index preserves insertion order, so loading yields tensors in the same
order they were saved.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointError"]

_FORMAT_TAG = "petrecon-checkpoint-v1"


class CheckpointError(RuntimeError):
    """A checkpoint file is missing or malformed."""


def save_checkpoint(stem: str | Path, tensors, meta: dict[str, str] | None = None) -> None:
    """Write ``tensors`` (iterable of (name, ndarray)) under ``stem``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    index_lines = [f"format = {_FORMAT_TAG}"]
    for key, value in (meta or {}).items():
        if " " in key:
            raise ValueError(f"meta key may not contain spaces: {key!r}")
        index_lines.append(f"meta = {key} {value}")
    blob = bytearray()
    for name, array in tensors:
        if " " in name:
            raise ValueError(f"tensor name may not contain spaces: {name!r}")
        data = np.ascontiguousarray(array, dtype="<f4")
        shape = "x".join(str(d) for d in data.shape) or "1"
        index_lines.append(f"tensor = {name} {shape} {len(blob)}")
        blob.extend(data.tobytes())
    stem.with_suffix(stem.suffix + ".f32").write_bytes(bytes(blob))
    stem.with_suffix(stem.suffix + ".idx").write_text(
        "\n".join(index_lines) + "\n", encoding="utf-8")


def load_checkpoint(stem: str | Path):
    """Read a checkpoint; returns ``(tensors, meta)``.

    ``tensors`` is a dict name -> float32 ndarray preserving save order,
    ``meta`` a dict of the metadata entries.
    """
    stem = Path(stem)
    idx_path = stem.with_suffix(stem.suffix + ".idx")
    blob_path = stem.with_suffix(stem.suffix + ".f32")
    if not idx_path.exists():
        raise CheckpointError(f"checkpoint index not found: {idx_path}")
    if not blob_path.exists():
        raise CheckpointError(f"checkpoint data not found: {blob_path}")
    blob = blob_path.read_bytes()
    meta: dict[str, str] = {}
    tensors: dict[str, np.ndarray] = {}
    for lineno, raw in enumerate(idx_path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition("=")
        key = key.strip()
        rest = rest.strip()
        if key == "format":
            if rest != _FORMAT_TAG:
                raise CheckpointError(f"{idx_path}: unsupported format {rest!r}")
        elif key == "meta":
            mkey, _, mval = rest.partition(" ")
            meta[mkey] = mval
        elif key == "tensor":
            parts = rest.split()
            if len(parts) != 3:
                raise CheckpointError(f"{idx_path}:{lineno}: malformed tensor line")
            name, shape_s, offset_s = parts
            shape = tuple(int(d) for d in shape_s.split("x"))
            offset = int(offset_s)
            count = int(np.prod(shape))
            end = offset + 4 * count
            if end > len(blob):
                raise CheckpointError(
                    f"{idx_path}:{lineno}: tensor {name} overruns data blob "
                    f"({end} > {len(blob)} bytes)")
            flat = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            tensors[name] = flat.reshape(shape).copy()
        else:
            raise CheckpointError(f"{idx_path}:{lineno}: unknown key {key!r}")
    return tensors, meta
