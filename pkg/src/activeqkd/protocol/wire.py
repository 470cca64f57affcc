"""Length-prefixed frames for the classical sifting channel.

    frame        = msg_type:u8 | payload_len:u32le | payload
    BASIS_REVEAL = {clock_index:u64le, basis:u8}*      (Bob -> Alice)
    SIFT_KEEP    = {clock_index:u64le}*                (Alice -> Bob)
    SESSION_CTRL = command:u8 | clock_index:u64le      (either way)
    QBER_SAMPLE  = {clock_index:u64le, bit:u8}*        (Alice -> Bob, estimate mode only)
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

HEADER = struct.Struct("<BI")
HEADER_LEN = HEADER.size
MAX_PAYLOAD = 1 << 26

REVEAL_DTYPE = np.dtype([("clock_index", "<u8"), ("basis", "u1")])
SAMPLE_DTYPE = np.dtype([("clock_index", "<u8"), ("bit", "u1")])
KEEP_DTYPE = np.dtype("<u8")
_CTRL = struct.Struct("<BQ")


class ProtocolError(Exception):
    pass


class TruncatedFrame(ProtocolError):
    pass


class MsgType(IntEnum):
    BASIS_REVEAL = 1
    SIFT_KEEP = 2
    SESSION_CTRL = 3
    QBER_SAMPLE = 4


class Ctrl(IntEnum):
    START = 1
    STOP = 2
    SUSPEND = 3
    RESUME = 4
    # everything before clock_index is settled; Alice may drop those preparations
    COMMIT = 5


@dataclass(frozen=True)
class SiftFrame:
    msg_type: MsgType
    payload: bytes = b""

    @property
    def payload_len(self) -> int:
        return len(self.payload)


def frame_encode(frame: SiftFrame) -> bytes:
    if len(frame.payload) > MAX_PAYLOAD:
        raise ProtocolError("payload too large")
    return HEADER.pack(int(MsgType(frame.msg_type)), len(frame.payload)) + bytes(frame.payload)


def _parse_header(buf) -> tuple[MsgType, int]:
    if len(buf) < HEADER_LEN:
        raise TruncatedFrame(f"need {HEADER_LEN} header bytes, have {len(buf)}")
    raw_type, length = HEADER.unpack_from(buf, 0)
    try:
        msg_type = MsgType(raw_type)
    except ValueError:
        raise ProtocolError(f"unknown msg_type {raw_type}") from None
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"declared payload length {length} exceeds limit")
    return msg_type, length


def frame_decode(data: bytes) -> SiftFrame:
    """Decode exactly one frame; rejects truncated and over-long input."""
    msg_type, length = _parse_header(data)
    have = len(data) - HEADER_LEN
    if have < length:
        raise TruncatedFrame(f"declared {length} payload bytes, have {have}")
    if have > length:
        raise ProtocolError(f"{have - length} trailing bytes after frame")
    return SiftFrame(msg_type, bytes(data[HEADER_LEN:]))


class FrameReader:
    """Incremental decoder for a byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[SiftFrame]:
        self._buf += data
        frames = []
        while len(self._buf) >= HEADER_LEN:
            msg_type, length = _parse_header(self._buf)
            end = HEADER_LEN + length
            if len(self._buf) < end:
                break
            frames.append(SiftFrame(msg_type, bytes(self._buf[HEADER_LEN:end])))
            del self._buf[:end]
        return frames

    @property
    def pending(self) -> int:
        return len(self._buf)


# -- payloads --------------------------------------------------------------

def _records(payload: bytes, dtype: np.dtype, what: str) -> np.ndarray:
    if len(payload) % dtype.itemsize:
        raise ProtocolError(f"{what} payload length {len(payload)} not a multiple of {dtype.itemsize}")
    return np.frombuffer(payload, dtype=dtype)


def basis_reveal(indices, bases) -> SiftFrame:
    rec = np.empty(len(indices), dtype=REVEAL_DTYPE)
    rec["clock_index"] = indices
    rec["basis"] = bases
    return SiftFrame(MsgType.BASIS_REVEAL, rec.tobytes())


def parse_basis_reveal(frame: SiftFrame) -> tuple[np.ndarray, np.ndarray]:
    if frame.msg_type != MsgType.BASIS_REVEAL:
        raise ProtocolError(f"expected BASIS_REVEAL, got {frame.msg_type.name}")
    rec = _records(frame.payload, REVEAL_DTYPE, "BASIS_REVEAL")
    if rec.size and rec["basis"].max() > 1:
        raise ProtocolError("basis byte must be 0 or 1")
    return rec["clock_index"].copy(), rec["basis"].copy()


def sift_keep(indices) -> SiftFrame:
    return SiftFrame(MsgType.SIFT_KEEP, np.asarray(indices, dtype=KEEP_DTYPE).tobytes())


def parse_sift_keep(frame: SiftFrame) -> np.ndarray:
    if frame.msg_type != MsgType.SIFT_KEEP:
        raise ProtocolError(f"expected SIFT_KEEP, got {frame.msg_type.name}")
    return _records(frame.payload, KEEP_DTYPE, "SIFT_KEEP").copy()


def session_ctrl(command: Ctrl, clock_index: int = 0) -> SiftFrame:
    return SiftFrame(MsgType.SESSION_CTRL, _CTRL.pack(int(command), clock_index))


def parse_session_ctrl(frame: SiftFrame) -> tuple[Ctrl, int]:
    if frame.msg_type != MsgType.SESSION_CTRL:
        raise ProtocolError(f"expected SESSION_CTRL, got {frame.msg_type.name}")
    if len(frame.payload) != _CTRL.size:
        raise ProtocolError("SESSION_CTRL payload must be 9 bytes")
    raw, clock = _CTRL.unpack(frame.payload)
    try:
        return Ctrl(raw), clock
    except ValueError:
        raise ProtocolError(f"unknown SESSION_CTRL command {raw}") from None


def qber_sample(indices, bits) -> SiftFrame:
    rec = np.empty(len(indices), dtype=SAMPLE_DTYPE)
    rec["clock_index"] = indices
    rec["bit"] = bits
    return SiftFrame(MsgType.QBER_SAMPLE, rec.tobytes())


def parse_qber_sample(frame: SiftFrame) -> tuple[np.ndarray, np.ndarray]:
    if frame.msg_type != MsgType.QBER_SAMPLE:
        raise ProtocolError(f"expected QBER_SAMPLE, got {frame.msg_type.name}")
    rec = _records(frame.payload, SAMPLE_DTYPE, "QBER_SAMPLE")
    return rec["clock_index"].copy(), rec["bit"].copy()
