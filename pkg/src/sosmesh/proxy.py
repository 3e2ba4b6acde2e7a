"""GATT proxy framing: fit whole network PDUs through small, reliable links.

A proxy client (e.g. a smartphone without an advertising bearer) talks to a
proxy server over a connection-oriented link with a fixed MTU. Each link
frame carries a 1-byte header:

    bits 7..6  segmentation flag (complete / first / continuation / last)
    bits 5..0  message type

followed by up to MTU-1 payload bytes. The server reassembles client frames
back into network PDUs and injects them into the flooding mesh; mesh PDUs
travel the other way the same manner.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional, Tuple

from .errors import InvalidMtu, ProtocolViolation

DEFAULT_MTU = 20
MIN_MTU = 4  # header byte + at least a sliver of payload


class SegmentFlag(IntEnum):
    COMPLETE = 0
    FIRST = 1
    CONTINUATION = 2
    LAST = 3


class ProxyMessageType(IntEnum):
    NETWORK_PDU = 0x00
    BEACON = 0x01
    CONFIG = 0x02


@dataclass(frozen=True)
class ProxyPdu:
    """One link frame: header byte + payload chunk."""

    flag: SegmentFlag
    message_type: int
    payload: bytes

    def __post_init__(self) -> None:
        if not 0 <= self.message_type <= 0x3F:
            raise ValueError(f"message type {self.message_type:#x} outside 6 bits")

    def encode(self) -> bytes:
        return bytes([(self.flag << 6) | self.message_type]) + self.payload

    @classmethod
    def decode(cls, data: bytes) -> "ProxyPdu":
        if not data:
            raise ProtocolViolation("empty proxy frame")
        return cls(SegmentFlag(data[0] >> 6), data[0] & 0x3F, data[1:])


def proxy_segment(message_type: int, payload: bytes, mtu: int = DEFAULT_MTU) -> List[ProxyPdu]:
    """Split a message into link frames that each fit within `mtu` bytes."""
    if mtu < MIN_MTU:
        raise InvalidMtu(f"mtu {mtu} below minimum {MIN_MTU}")
    if not payload:
        raise ValueError("cannot segment an empty payload")
    chunk = mtu - 1
    if len(payload) <= chunk:
        return [ProxyPdu(SegmentFlag.COMPLETE, message_type, payload)]
    pieces = [payload[i : i + chunk] for i in range(0, len(payload), chunk)]
    frames = [ProxyPdu(SegmentFlag.FIRST, message_type, pieces[0])]
    frames += [ProxyPdu(SegmentFlag.CONTINUATION, message_type, p) for p in pieces[1:-1]]
    frames.append(ProxyPdu(SegmentFlag.LAST, message_type, pieces[-1]))
    return frames


@dataclass
class ProxyLink:
    """Reassembly state for one client<->server connection."""

    mtu: int = DEFAULT_MTU
    buffer: bytearray = field(default_factory=bytearray)
    in_progress_type: Optional[int] = None

    def __post_init__(self) -> None:
        if self.mtu < MIN_MTU:
            raise InvalidMtu(f"mtu {self.mtu} below minimum {MIN_MTU}")

    def reset(self) -> None:
        self.buffer.clear()
        self.in_progress_type = None


def proxy_reassemble(link: ProxyLink, frame: ProxyPdu) -> Optional[Tuple[int, bytes]]:
    """Feed one frame into the link's reassembly buffer.

    Returns (message_type, payload) when a message completes, None while more
    segments are pending. Any out-of-order flag or a message-type switch mid
    message resets the buffer and raises ProtocolViolation.
    """
    if frame.flag == SegmentFlag.COMPLETE:
        if link.in_progress_type is not None:
            link.reset()
            raise ProtocolViolation("complete frame while reassembly in progress")
        return frame.message_type, frame.payload

    if frame.flag == SegmentFlag.FIRST:
        if link.in_progress_type is not None:
            link.reset()
            raise ProtocolViolation("first frame while reassembly in progress")
        link.in_progress_type = frame.message_type
        link.buffer.extend(frame.payload)
        return None

    # continuation or last
    if link.in_progress_type is None:
        link.reset()
        raise ProtocolViolation(f"{frame.flag.name.lower()} frame with no message in progress")
    if frame.message_type != link.in_progress_type:
        link.reset()
        raise ProtocolViolation("message type changed mid-reassembly")

    link.buffer.extend(frame.payload)
    if frame.flag == SegmentFlag.CONTINUATION:
        return None
    message = bytes(link.buffer)
    link.reset()
    return frame.message_type, message
