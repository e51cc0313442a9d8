"""USL message framing.

Wire layout (all fields one byte except the payload)::

    offset  0        1      2      3       4            5 ...
            control  src    dst    kind    payload_len  payload[payload_len]

``control`` is always ``0xDE``. Ranging timestamps travel inside the payload
as little-endian 40-bit tick counts; lengths and coordinates as signed 64-bit
little-endian fixed-point millimetres with 32 fractional bits.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

CONTROL_BYTE = 0xDE
HEADER_LEN = 5
MAX_PAYLOAD = 127

TIMESTAMP_BYTES = 5
TIMESTAMP_MASK = (1 << 40) - 1

# Q32.32 in millimetres -> ~2.3e-13 m resolution
FIXED_FRAC_BITS = 32
_FIXED_SCALE = 1000.0 * (1 << FIXED_FRAC_BITS)


class CodecError(ValueError):
    pass


class EncodeOverflow(CodecError):
    pass


class Truncated(CodecError):
    pass


class ForeignMessage(CodecError):
    pass


class UnknownKind(CodecError):
    pass


class TrailingBytes(CodecError):
    pass


class MessageKind(enum.IntEnum):
    RANGING_INIT = 0x01
    RANGING_RESPONSE = 0x02
    RANGING_FINAL = 0x03
    RANGING_REPORT = 0x04
    DATA = 0x10


@dataclass(frozen=True)
class UwbMessage:
    src: int
    dst: int
    kind: MessageKind
    payload: bytes = b""
    control: int = field(default=CONTROL_BYTE)

    def __post_init__(self):
        for name in ("src", "dst", "control"):
            value = getattr(self, name)
            if not 0 <= value <= 0xFF:
                raise ValueError(f"{name}={value} does not fit in one byte")
        object.__setattr__(self, "kind", MessageKind(self.kind))
        object.__setattr__(self, "payload", bytes(self.payload))

    @property
    def payload_len(self) -> int:
        return len(self.payload)


def encode(msg: UwbMessage, max_payload: int = MAX_PAYLOAD) -> bytes:
    if msg.payload_len > max_payload:
        raise EncodeOverflow(
            f"payload of {msg.payload_len} bytes exceeds maximum {max_payload}"
        )
    header = bytes((msg.control, msg.src, msg.dst, int(msg.kind), msg.payload_len))
    return header + msg.payload


def decode(data: bytes) -> UwbMessage:
    data = bytes(data)
    if len(data) < HEADER_LEN:
        raise Truncated(f"{len(data)} bytes, header needs {HEADER_LEN}")
    control, src, dst, kind_code, length = data[:HEADER_LEN]
    if control != CONTROL_BYTE:
        raise ForeignMessage(f"control byte 0x{control:02X}")
    try:
        kind = MessageKind(kind_code)
    except ValueError:
        raise UnknownKind(f"message kind code 0x{kind_code:02X}") from None
    end = HEADER_LEN + length
    if len(data) < end:
        raise Truncated(f"payload declares {length} bytes, {len(data) - HEADER_LEN} present")
    if len(data) > end:
        raise TrailingBytes(f"{len(data) - end} bytes after payload")
    return UwbMessage(src=src, dst=dst, kind=kind, payload=data[HEADER_LEN:end])


def accepts(msg: UwbMessage, self_id: int) -> bool:
    """A node only processes messages addressed to it."""
    return msg.dst == self_id


def filter_stream(frames: Iterable[bytes], self_id: int):
    """Yield the decodable frames of ``frames`` that are addressed to ``self_id``.

    Foreign, malformed and misaddressed frames are dropped silently, the way
    a listening radio would.
    """
    for frame in frames:
        try:
            msg = decode(frame)
        except CodecError:
            continue
        if accepts(msg, self_id):
            yield msg


def pack_timestamps(ticks: Sequence[int]) -> bytes:
    return b"".join((int(t) & TIMESTAMP_MASK).to_bytes(TIMESTAMP_BYTES, "little") for t in ticks)


def unpack_timestamps(payload: bytes, count: int, offset: int = 0) -> list[int]:
    end = offset + count * TIMESTAMP_BYTES
    if len(payload) < end:
        raise Truncated(f"need {count} timestamps, payload has {len(payload)} bytes")
    return [
        int.from_bytes(payload[i:i + TIMESTAMP_BYTES], "little")
        for i in range(offset, end, TIMESTAMP_BYTES)
    ]


def tick_delta(later: int, earlier: int) -> int:
    """Tick difference modulo the 40-bit counter wrap."""
    return (later - earlier) & TIMESTAMP_MASK


def to_fixed(meters: float) -> int:
    return int(round(meters * _FIXED_SCALE))


def from_fixed(raw: int) -> float:
    return raw / _FIXED_SCALE


def pack_fixed(values: Iterable[float]) -> bytes:
    return b"".join(struct.pack("<q", to_fixed(v)) for v in values)


def unpack_fixed(payload: bytes, count: int, offset: int = 0) -> list[float]:
    end = offset + 8 * count
    if len(payload) < end:
        raise Truncated(f"need {count} fixed-point values, payload has {len(payload)} bytes")
    return [from_fixed(v) for v in struct.unpack_from(f"<{count}q", payload, offset)]
