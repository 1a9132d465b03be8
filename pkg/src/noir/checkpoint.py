"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"NOIR"                       magic
    u16   format version
    u16   tag length, tag bytes   one of COMPONENT_TAGS
    u32   config length, bytes    canonical JSON (sorted keys, compact)
    u32   tensor count
    per tensor:
        u16 name length, name bytes
        u8  ndim, u32 * ndim dims
    u64   payload length in bytes
    payload                       float32 tensors, in index order, row-major

The index alone is enough to recover every tensor.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"NOIR"
VERSION = 1
COMPONENT_TAGS = ("input_inr", "output_inr", "operator", "latents")


class CheckpointError(ValueError):
    pass


class VersionMismatch(CheckpointError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass
class Checkpoint:
    tag: str
    config: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.tag not in COMPONENT_TAGS:
            raise CheckpointError(f"unknown component tag {self.tag!r}; expected one of {COMPONENT_TAGS}")

    def to_bytes(self) -> bytes:
        tag = self.tag.encode()
        cfg = canonical_json(self.config).encode()
        parts = [MAGIC, struct.pack("<HH", VERSION, len(tag)), tag,
                 struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(self.tensors))]
        payload = []
        for name, arr in self.tensors.items():
            arr = np.asarray(arr, dtype="<f4")
            key = name.encode()
            parts += [struct.pack("<H", len(key)), key, struct.pack("<B", arr.ndim),
                      struct.pack(f"<{arr.ndim}I", *arr.shape)]
            payload.append(arr.tobytes())
        blob = b"".join(payload)
        parts += [struct.pack("<Q", len(blob)), blob]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if data[:4] != MAGIC:
            raise CheckpointError("not a NOIR checkpoint (bad magic at offset 0)")
        pos = 4

        def take(fmt):
            nonlocal pos
            size = struct.calcsize(fmt)
            if pos + size > len(data):
                raise CheckpointError(f"truncated checkpoint at offset {pos}")
            out = struct.unpack_from(fmt, data, pos)
            pos += size
            return out

        def raw(n):
            nonlocal pos
            if pos + n > len(data):
                raise CheckpointError(f"truncated checkpoint at offset {pos}")
            out = data[pos:pos + n]
            pos += n
            return out

        version, tag_len = take("<HH")
        if version != VERSION:
            raise VersionMismatch(f"checkpoint format version {version}, this build reads {VERSION}; "
                                  "re-export the checkpoint with a matching build")
        tag = raw(tag_len).decode()
        (cfg_len,) = take("<I")
        start = pos
        try:
            config = json.loads(raw(cfg_len).decode())
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise CheckpointError(f"config blob at offset {start} is not valid JSON") from None
        (count,) = take("<I")
        index = []
        for _ in range(count):
            (name_len,) = take("<H")
            name = raw(name_len).decode()
            (ndim,) = take("<B")
            shape = take(f"<{ndim}I") if ndim else ()
            index.append((name, tuple(shape)))
        (payload_len,) = take("<Q")
        declared = sum(4 * int(np.prod(s)) for _, s in index)
        if declared != payload_len or pos + payload_len != len(data):
            raise CheckpointError(f"payload is {len(data) - pos} bytes, index declares {declared}")
        tensors = {}
        for name, shape in index:
            n = 4 * int(np.prod(shape))
            tensors[name] = np.frombuffer(raw(n), dtype="<f4").astype(np.float32).reshape(shape)
        return cls(tag, config, tensors)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path, expect_tag: str | tuple[str, ...] | None = None) -> "Checkpoint":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint {path} does not exist; run the producing command first")
        ckpt = cls.from_bytes(path.read_bytes())
        if expect_tag is not None:
            tags = (expect_tag,) if isinstance(expect_tag, str) else expect_tag
            if ckpt.tag not in tags:
                raise CheckpointError(f"{path} holds a {ckpt.tag!r} component, expected {' or '.join(tags)}")
        return ckpt
