"""Binary frames for the only traffic that crosses agent boundaries.

Upload:    b"SHMU" | version u16 | round u32 | agent_id u32 | m u32 | m x f32
Broadcast: b"SHMB" | version u16 | round u32 | m u32 | m x f32

All integers and floats are little-endian. A transcript file is a sequence
of frames, each prefixed by its byte length as u32.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DecodeError

VERSION = 1
UPLOAD_MAGIC = b"SHMU"
BROADCAST_MAGIC = b"SHMB"
_UPLOAD_HEADER = struct.Struct("<4sHIII")
_BROADCAST_HEADER = struct.Struct("<4sHII")
_LEN = struct.Struct("<I")

UPLOAD_HEADER_SIZE = _UPLOAD_HEADER.size  # 18
BROADCAST_HEADER_SIZE = _BROADCAST_HEADER.size  # 14


def upload_size(m: int) -> int:
    return UPLOAD_HEADER_SIZE + 4 * m


def broadcast_size(m: int) -> int:
    return BROADCAST_HEADER_SIZE + 4 * m


def quantize(vec) -> np.ndarray:
    """Value of ``vec`` after a trip through the f32 wire encoding, as float64."""
    return np.asarray(vec, dtype="<f4").astype(np.float64)


def _payload(buf, header, magic):
    if len(buf) < header.size:
        raise DecodeError(f"frame of {len(buf)} bytes is shorter than the {header.size}-byte header", len(buf))
    fields = header.unpack_from(buf)
    if fields[0] != magic:
        raise DecodeError(f"bad magic {fields[0]!r}, expected {magic!r}", 0)
    if fields[1] != VERSION:
        raise DecodeError(f"unsupported version {fields[1]}", 4)
    m = fields[-1]
    expected = header.size + 4 * m
    if len(buf) != expected:
        raise DecodeError(f"frame is {len(buf)} bytes but header declares m={m} ({expected} bytes)", header.size)
    return fields, np.frombuffer(buf, dtype="<f4", offset=header.size).astype(np.float64)


@dataclass
class MemoryUploadMsg:
    round: int
    agent_id: int
    payload: np.ndarray

    def encode(self) -> bytes:
        data = np.asarray(self.payload, dtype="<f4")
        return _UPLOAD_HEADER.pack(UPLOAD_MAGIC, VERSION, self.round, self.agent_id, data.size) + data.tobytes()

    @classmethod
    def decode(cls, buf: bytes) -> "MemoryUploadMsg":
        (_, _, rnd, agent_id, _), payload = _payload(bytes(buf), _UPLOAD_HEADER, UPLOAD_MAGIC)
        return cls(rnd, agent_id, payload)


@dataclass
class BroadcastMsg:
    round: int
    payload: np.ndarray

    def encode(self) -> bytes:
        data = np.asarray(self.payload, dtype="<f4")
        return _BROADCAST_HEADER.pack(BROADCAST_MAGIC, VERSION, self.round, data.size) + data.tobytes()

    @classmethod
    def decode(cls, buf: bytes) -> "BroadcastMsg":
        (_, _, rnd, _), payload = _payload(bytes(buf), _BROADCAST_HEADER, BROADCAST_MAGIC)
        return cls(rnd, payload)


def decode_frame(buf: bytes):
    """Decode an upload or broadcast frame, dispatching on the magic."""
    magic = bytes(buf[:4])
    if magic == UPLOAD_MAGIC:
        return MemoryUploadMsg.decode(buf)
    if magic == BROADCAST_MAGIC:
        return BroadcastMsg.decode(buf)
    raise DecodeError(f"unknown frame magic {magic!r}", 0)


def read_transcript(path) -> list[bytes]:
    data = Path(path).read_bytes()
    frames, pos = [], 0
    while pos < len(data):
        if pos + _LEN.size > len(data):
            raise DecodeError("truncated frame length prefix", pos)
        (n,) = _LEN.unpack_from(data, pos)
        pos += _LEN.size
        if pos + n > len(data):
            raise DecodeError(f"frame declares {n} bytes but only {len(data) - pos} remain", pos)
        frames.append(data[pos:pos + n])
        pos += n
    return frames


class Channel:
    """In-process link between agents and the server that counts every byte.

    With ``transcript`` set, each frame is also appended to that file.
    """

    def __init__(self, transcript=None):
        self.messages = 0
        self.uplink_bytes = 0
        self.downlink_bytes = 0
        self._fh = open(transcript, "wb") if transcript is not None else None

    def send(self, frame: bytes, uplink: bool) -> bytes:
        self.messages += 1
        if uplink:
            self.uplink_bytes += len(frame)
        else:
            self.downlink_bytes += len(frame)
        if self._fh is not None:
            self._fh.write(_LEN.pack(len(frame)))
            self._fh.write(frame)
        return frame

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
