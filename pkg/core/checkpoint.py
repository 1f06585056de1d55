"""
Checkpoint Container - Versioned binary file of named float64 tensors with a JSON header and SHA-256 trailer
"""
import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

from .errors import FormatError, IntegrityError

logger = logging.getLogger(__name__)

MAGIC = b"SCCACKPT"
VERSION = 1
DIGEST_SIZE = 32


@dataclass
class Checkpoint:
    kind: str
    header: Dict[str, Any] = field(default_factory=dict)
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    header = json.dumps({'kind': ckpt.kind, **ckpt.header}, sort_keys=True).encode('utf-8')
    parts = [MAGIC, struct.pack('<I', VERSION), struct.pack('<Q', len(header)), header,
             struct.pack('<I', len(ckpt.tensors))]
    for name in sorted(ckpt.tensors):
        # ascontiguousarray would promote 0-d arrays to shape (1,)
        arr = np.array(ckpt.tensors[name], dtype='<f8', order='C')
        encoded = name.encode('utf-8')
        parts.append(struct.pack('<H', len(encoded)) + encoded)
        parts.append(struct.pack('<B', arr.ndim) + struct.pack(f'<{arr.ndim}Q', *arr.shape))
        parts.append(arr.tobytes())
    body = b''.join(parts)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"checkpoint truncated, needed {n} more bytes", offset=self.pos)
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(raw: bytes) -> Checkpoint:
    if raw[:len(MAGIC)] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)", offset=0)
    if len(raw) < len(MAGIC) + 4 + DIGEST_SIZE:
        raise FormatError("checkpoint truncated", offset=len(raw))
    body, digest = raw[:-DIGEST_SIZE], raw[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("checkpoint checksum mismatch, refusing to load")

    reader = _Reader(body)
    reader.take(len(MAGIC))
    (version,) = reader.unpack('<I')
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=len(MAGIC))
    (header_len,) = reader.unpack('<Q')
    header = json.loads(reader.take(header_len).decode('utf-8'))
    (count,) = reader.unpack('<I')
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack('<H')
        name = reader.take(name_len).decode('utf-8')
        (ndim,) = reader.unpack('<B')
        shape = reader.unpack(f'<{ndim}Q') if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(8 * size), dtype='<f8')
        tensors[name] = data.astype(np.float64).reshape(shape)
    if reader.pos != len(body):
        raise FormatError("trailing bytes after the last tensor", offset=reader.pos)
    kind = header.pop('kind')
    return Checkpoint(kind=kind, header=header, tensors=tensors)


def save_checkpoint(path: str, ckpt: Checkpoint):
    """Write through a .part file so an interrupted save never clobbers the previous checkpoint."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + '.part'
    with open(tmp, 'wb') as f:
        f.write(encode_checkpoint(ckpt))
    os.replace(tmp, path)
    logger.info(f"Saved {ckpt.kind} checkpoint to {path}")


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, 'rb') as f:
        raw = f.read()
    ckpt = decode_checkpoint(raw)
    logger.info(f"Loaded {ckpt.kind} checkpoint from {path}")
    return ckpt


def prefixed(arrays: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {f"{prefix}{name}": arr for name, arr in arrays.items()}


def unprefixed(arrays: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {name[len(prefix):]: arr for name, arr in arrays.items() if name.startswith(prefix)}
