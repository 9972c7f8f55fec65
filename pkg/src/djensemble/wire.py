"""Binary framing for the stdio predictor protocol.

A message is the magic ``b"STPB"``, three little-endian u32 values
``(count, height, width)`` and then ``count * height * width`` little-endian
f32 values in frame-major order. Requests carry the n input frames, replies
the K output frames.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"STPB"
HEADER = struct.Struct("<4sIII")
_F32 = np.dtype("<f4")


class ProtocolError(RuntimeError):
    pass


def encode(frames: np.ndarray) -> bytes:
    frames = np.ascontiguousarray(frames, dtype=_F32)
    if frames.ndim != 3:
        raise ValueError(f"frames must be (count, h, w), got shape {frames.shape}")
    return HEADER.pack(MAGIC, *frames.shape) + frames.tobytes()


def parse_header(data: bytes) -> tuple[int, int, int]:
    if len(data) != HEADER.size:
        raise ProtocolError("truncated header")
    magic, count, h, w = HEADER.unpack(data)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    return count, h, w


def payload_size(count: int, h: int, w: int) -> int:
    return count * h * w * _F32.itemsize


def decode_payload(data: bytes, count: int, h: int, w: int) -> np.ndarray:
    if len(data) != payload_size(count, h, w):
        raise ProtocolError("payload size mismatch")
    return np.frombuffer(data, dtype=_F32).reshape(count, h, w).astype(np.float32)


def decode(data: bytes) -> np.ndarray:
    count, h, w = parse_header(data[: HEADER.size])
    return decode_payload(data[HEADER.size :], count, h, w)


def _read_exact(stream: BinaryIO, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            if not buf:
                return None
            raise ProtocolError("truncated message")
        buf += chunk
    return bytes(buf)


def read_message(stream: BinaryIO) -> np.ndarray | None:
    """Blocking read of one message; ``None`` on clean EOF."""
    head = _read_exact(stream, HEADER.size)
    if head is None:
        return None
    count, h, w = parse_header(head)
    body = _read_exact(stream, payload_size(count, h, w)) if count * h * w else b""
    if body is None:
        raise ProtocolError("truncated message")
    return decode_payload(body, count, h, w)


def write_message(stream: BinaryIO, frames: np.ndarray) -> None:
    stream.write(encode(frames))
    stream.flush()
