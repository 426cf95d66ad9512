"""Binary checkpoints.

Layout, all integers little-endian::

    magic      8 bytes   b"ISOCKPT\\x00"
    version    1 byte    FORMAT_VERSION
    length     u64       payload byte count
    payload
    digest     32 bytes  SHA-256 of payload

Payload::

    step       u64       training steps completed
    opt_step   u64       optimizer step counter
    meta_len   u32, then meta_len bytes of UTF-8 JSON (config snapshot etc.)
    count      u32       number of arrays
    per array: name_len u16, name (UTF-8), ndim u8, dims u32 * ndim, float64 LE data

Array names are ``param/<name>``, ``adam_m/<name>`` and ``adam_v/<name>``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError

MAGIC = b"ISOCKPT\x00"
FORMAT_VERSION = 1


class CheckpointError(InputError):
    pass


@dataclass
class Checkpoint:
    step: int
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    opt_step: int = 0
    meta: dict = field(default_factory=dict)


def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode(ckpt: Checkpoint) -> bytes:
    entries = []
    for prefix, table in (("param", ckpt.params), ("adam_m", ckpt.adam_m), ("adam_v", ckpt.adam_v)):
        for name in sorted(table):
            entries.append((f"{prefix}/{name}", np.asarray(table[name], dtype=np.float64)))
    meta = json.dumps(ckpt.meta, sort_keys=True).encode()
    parts = [struct.pack("<QQI", ckpt.step, ckpt.opt_step, len(meta)), meta, struct.pack("<I", len(entries))]
    for name, arr in entries:
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8").tobytes(order="C"))
    payload = b"".join(parts)
    return MAGIC + bytes([FORMAT_VERSION]) + struct.pack("<Q", len(payload)) + payload + hashlib.sha256(payload).digest()


def decode(blob: bytes) -> Checkpoint:
    if len(blob) < 17 or blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic header")
    if blob[8] != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {blob[8]}")
    (length,) = struct.unpack_from("<Q", blob, 9)
    payload = blob[17 : 17 + length]
    digest = blob[17 + length : 17 + length + 32]
    if len(payload) != length or len(digest) != 32:
        raise CheckpointError("checkpoint truncated")
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch")

    step, opt_step, meta_len = struct.unpack_from("<QQI", payload, 0)
    off = 20
    meta = json.loads(payload[off : off + meta_len].decode())
    off += meta_len
    (count,) = struct.unpack_from("<I", payload, off)
    off += 4
    tables: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", payload, off)
        off += 2
        name = payload[off : off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", payload, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", payload, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(payload, dtype="<f8", count=size, offset=off).astype(np.float64).reshape(shape)
        off += 8 * size
        prefix, _, key = name.partition("/")
        if prefix not in tables:
            raise CheckpointError(f"unknown array kind in {name!r}")
        tables[prefix][key] = arr
    return Checkpoint(step, tables["param"], tables["adam_m"], tables["adam_v"], opt_step, meta)


def save(path, ckpt: Checkpoint) -> None:
    atomic_write(path, encode(ckpt))


def load(path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}", [path]) from None
    return decode(blob)
