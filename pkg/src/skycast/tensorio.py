"""Flat binary tensor container with a human-readable sidecar.

Format "skycast-tensor-v1": the .bin file is the raw little-endian
float32 bytes of every member array concatenated in sidecar order, C
layout, no header. The .meta sidecar is a small text file:

    skycast-tensor-v1
    name<TAB>dtype<TAB>shape<TAB>axes<TAB>byte_offset

One line per member. Offsets are redundant (derivable from shapes) and
exist so a reader can seek straight to one member; they are validated on
load. Keeping the sidecar as text makes prepared datasets inspectable
with nothing but a pager.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import DataIntegrityError, MissingInputError

MAGIC = "skycast-tensor-v1"
_DTYPE = np.dtype("<f4")


def write_tensors(path: str | os.PathLike, members: dict[str, tuple[np.ndarray, str]]) -> None:
    """Write named arrays to `path`.bin with `path`.meta alongside.

    `members` maps name -> (array, axes) where axes is a short label like
    "flight,bracket,interval". Arrays are cast to little-endian float32.
    """
    base = Path(path)
    lines = [MAGIC]
    offset = 0
    blobs = []
    for name, (arr, axes) in members.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype=_DTYPE))
        shape = "x".join(str(s) for s in arr.shape)
        lines.append(f"{name}\t{_DTYPE.str}\t{shape}\t{axes}\t{offset}")
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    base.with_suffix(".meta").write_text("\n".join(lines) + "\n")
    base.with_suffix(".bin").write_bytes(b"".join(blobs))


def read_tensors(path: str | os.PathLike) -> dict[str, np.ndarray]:
    """Load every member of a container written by `write_tensors`."""
    base = Path(path)
    meta_path = base.with_suffix(".meta")
    bin_path = base.with_suffix(".bin")
    if not meta_path.exists() or not bin_path.exists():
        raise MissingInputError(f"tensor container {base} not found")
    lines = meta_path.read_text().splitlines()
    if not lines or lines[0] != MAGIC:
        raise DataIntegrityError(f"{meta_path} is not a {MAGIC} sidecar")
    raw = bin_path.read_bytes()
    out: dict[str, np.ndarray] = {}
    expected = 0
    for line in lines[1:]:
        if not line.strip():
            continue
        name, dtype, shape_s, _axes, offset_s = line.split("\t")
        if dtype != _DTYPE.str:
            raise DataIntegrityError(f"member {name} has unsupported dtype {dtype}")
        shape = tuple(int(s) for s in shape_s.split("x")) if shape_s else ()
        offset = int(offset_s)
        if offset != expected:
            raise DataIntegrityError(
                f"member {name} offset {offset} does not match running total {expected}"
            )
        nbytes = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        chunk = raw[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise DataIntegrityError(f"container truncated at member {name}")
        out[name] = np.frombuffer(chunk, dtype=_DTYPE).reshape(shape).copy()
        expected = offset + nbytes
    if expected != len(raw):
        raise DataIntegrityError(
            f"{bin_path} has {len(raw) - expected} trailing bytes not covered by sidecar"
        )
    return out


def read_member(path: str | os.PathLike, name: str) -> np.ndarray:
    """Load a single member by seeking to its offset."""
    base = Path(path)
    meta_path = base.with_suffix(".meta")
    if not meta_path.exists():
        raise MissingInputError(f"tensor container {base} not found")
    for line in meta_path.read_text().splitlines()[1:]:
        if not line.strip():
            continue
        member, dtype, shape_s, _axes, offset_s = line.split("\t")
        if member != name:
            continue
        shape = tuple(int(s) for s in shape_s.split("x")) if shape_s else ()
        nbytes = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        with open(base.with_suffix(".bin"), "rb") as fh:
            fh.seek(int(offset_s))
            chunk = fh.read(nbytes)
        if len(chunk) != nbytes:
            raise DataIntegrityError(f"container truncated at member {name}")
        return np.frombuffer(chunk, dtype=_DTYPE).reshape(shape).copy()
    raise MissingInputError(f"member {name} not present in {meta_path}")
