"""Managed-flooding network core: addressing, PDU framing, dedup cache, relay.

Wire format of a network PDU (29 bytes max, big-endian):

    [key-index:1][ttl:1][seq:3][src:2][dst:2]  9-byte header
    [ciphertext:0..16]                         sealed payload
    [tag:4]                                    truncated auth tag

The header is obfuscated before it touches the radio (see security module);
this module deals in the plaintext-header form.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, replace
from enum import Enum, auto
from typing import Dict, Optional, Set, TYPE_CHECKING

from .errors import MalformedPdu, OversizedPayload, SequenceExhausted
from .security import AppKey, NetKey

if TYPE_CHECKING:  # pragma: no cover - typing only
    from .models import ModelId, RegisteredModel

# ---------------------------------------------------------------------------
# Addressing
# ---------------------------------------------------------------------------

UNASSIGNED_ADDR = 0x0000
UNICAST_FIRST = 0x0001
UNICAST_LAST = 0x7FFF          # 32767 assignable device addresses
GROUP_FIRST = 0xC000
GROUP_LAST = 0xFFFE
BROADCAST_ADDR = 0xFFFF


class AddressClass(Enum):
    UNASSIGNED = auto()
    UNICAST = auto()
    GROUP = auto()
    BROADCAST = auto()


def classify_address(value: int) -> AddressClass:
    """Classify a 16-bit address value.

    The reserved block 0x8000-0xBFFF carries no meaning in this stack and is
    reported as UNASSIGNED, so it is rejected wherever a real address is
    required.
    """
    if not 0 <= value <= 0xFFFF:
        raise ValueError(f"address {value:#x} outside 16-bit range")
    if value == BROADCAST_ADDR:
        return AddressClass.BROADCAST
    if GROUP_FIRST <= value <= GROUP_LAST:
        return AddressClass.GROUP
    if UNICAST_FIRST <= value <= UNICAST_LAST:
        return AddressClass.UNICAST
    return AddressClass.UNASSIGNED


def is_unicast(value: int) -> bool:
    return UNICAST_FIRST <= value <= UNICAST_LAST


# ---------------------------------------------------------------------------
# Wire limits
# ---------------------------------------------------------------------------

MAX_PDU_SIZE = 29
HEADER_SIZE = 9
TAG_SIZE = 4
MAX_CIPHERTEXT = MAX_PDU_SIZE - HEADER_SIZE - TAG_SIZE  # 16
MAX_ACCESS_PAYLOAD = 11        # opcode + parameters
MAX_TTL = 127
DEFAULT_INITIAL_TTL = 127
SEQ_LIMIT = 1 << 24
RELAY_TTL_THRESHOLD = 2        # relay only if the retransmitted ttl stays >= 1


# ---------------------------------------------------------------------------
# Access payload (plaintext form, sealed before it reaches the wire)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AccessPayload:
    """Opcode byte plus parameters; at most 11 bytes total."""

    opcode: int
    parameters: bytes = b""

    def __post_init__(self) -> None:
        if not 0 <= self.opcode <= 0xFF:
            raise ValueError(f"opcode {self.opcode:#x} outside one byte")
        if 1 + len(self.parameters) > MAX_ACCESS_PAYLOAD:
            raise OversizedPayload(
                f"access payload {1 + len(self.parameters)} bytes exceeds {MAX_ACCESS_PAYLOAD}"
            )

    def encode(self) -> bytes:
        return bytes([self.opcode]) + self.parameters

    @classmethod
    def decode(cls, data: bytes) -> "AccessPayload":
        if not data:
            raise MalformedPdu("empty access payload")
        return cls(data[0], data[1:])


# ---------------------------------------------------------------------------
# Network PDU
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkPdu:
    """One sealed network-layer frame. Immutable; relaying produces copies."""

    net_key_id: int
    ttl: int
    seq: int
    src: int
    dst: int
    ciphertext: bytes
    tag: bytes

    def __post_init__(self) -> None:
        if not 0 <= self.net_key_id <= 0xFF:
            raise ValueError(f"net key index {self.net_key_id} does not fit the wire byte")
        if not 0 <= self.ttl <= MAX_TTL:
            raise ValueError(f"ttl {self.ttl} outside 0..{MAX_TTL}")
        if not 0 <= self.seq < SEQ_LIMIT:
            raise ValueError(f"seq {self.seq} outside 24-bit range")
        if not is_unicast(self.src):
            raise ValueError(f"src {self.src:#06x} is not a unicast address")
        if classify_address(self.dst) not in (
            AddressClass.UNICAST,
            AddressClass.GROUP,
            AddressClass.BROADCAST,
        ):
            raise ValueError(f"dst {self.dst:#06x} is not unicast/group/broadcast")
        if len(self.tag) != TAG_SIZE:
            raise ValueError(f"tag must be {TAG_SIZE} bytes")
        if len(self.ciphertext) > MAX_CIPHERTEXT:
            raise OversizedPayload(
                f"ciphertext {len(self.ciphertext)} bytes exceeds {MAX_CIPHERTEXT}"
            )

    def header(self) -> bytes:
        """The 9 plaintext header bytes in wire order."""
        return (
            bytes([self.net_key_id, self.ttl])
            + self.seq.to_bytes(3, "big")
            + self.src.to_bytes(2, "big")
            + self.dst.to_bytes(2, "big")
        )

    def bound_header(self) -> bytes:
        """Header bytes bound into the network seal: everything but TTL.

        TTL is left out so a relay can decrement it without re-sealing.
        """
        return (
            bytes([self.net_key_id])
            + self.seq.to_bytes(3, "big")
            + self.src.to_bytes(2, "big")
            + self.dst.to_bytes(2, "big")
        )


def encode_network_pdu(pdu: NetworkPdu) -> bytes:
    """Serialize to plaintext-header wire bytes (<= 29 by construction)."""
    return pdu.header() + pdu.ciphertext + pdu.tag


def decode_network_pdu(data: bytes) -> NetworkPdu:
    """Parse plaintext-header wire bytes; MalformedPdu on anything invalid."""
    if len(data) < HEADER_SIZE + TAG_SIZE:
        raise MalformedPdu(f"{len(data)} bytes is shorter than header + tag")
    if len(data) > MAX_PDU_SIZE:
        raise MalformedPdu(f"{len(data)} bytes exceeds the {MAX_PDU_SIZE}-byte ceiling")
    try:
        return NetworkPdu(
            net_key_id=data[0],
            ttl=data[1],
            seq=int.from_bytes(data[2:5], "big"),
            src=int.from_bytes(data[5:7], "big"),
            dst=int.from_bytes(data[7:9], "big"),
            ciphertext=data[9:-TAG_SIZE],
            tag=data[-TAG_SIZE:],
        )
    except (ValueError, OversizedPayload) as exc:
        raise MalformedPdu(str(exc)) from exc


# ---------------------------------------------------------------------------
# Duplicate-suppression cache
# ---------------------------------------------------------------------------

class MessageCache:
    """Bounded FIFO set of (src, seq) pairs already seen by a node."""

    def __init__(self, capacity: int = 128) -> None:
        if capacity < 1:
            raise ValueError("cache capacity must be positive")
        self.capacity = capacity
        self._seen: "OrderedDict[tuple, None]" = OrderedDict()

    def __len__(self) -> int:
        return len(self._seen)

    def __contains__(self, key: tuple) -> bool:
        return key in self._seen

    def check_insert(self, src: int, seq: int) -> bool:
        """Insert (src, seq) if unseen. True = admitted, False = duplicate."""
        key = (src, seq)
        if key in self._seen:
            return False
        if len(self._seen) >= self.capacity:
            self._seen.popitem(last=False)  # evict oldest insertion
        self._seen[key] = None
        return True


def cache_check_insert(cache: MessageCache, src: int, seq: int) -> bool:
    return cache.check_insert(src, seq)


# ---------------------------------------------------------------------------
# Node state
# ---------------------------------------------------------------------------

class Feature(Enum):
    RELAY = "relay"
    PROXY = "proxy"
    LOW_POWER = "low_power"
    FRIEND = "friend"


class Bearer(Enum):
    ADVERTISING = "advertising"
    GATT = "gatt"


@dataclass
class NodeState:
    """Everything one mesh node remembers between messages."""

    unicast: int
    features: Set[Feature] = field(default_factory=set)
    bearers: Set[Bearer] = field(default_factory=set)
    seq_counter: int = 0
    cache: MessageCache = field(default_factory=MessageCache)
    net_keys: Dict[int, NetKey] = field(default_factory=dict)
    app_keys: Dict[int, AppKey] = field(default_factory=dict)
    models: "Dict[ModelId, RegisteredModel]" = field(default_factory=dict)
    initial_ttl: int = DEFAULT_INITIAL_TTL

    def __post_init__(self) -> None:
        if not is_unicast(self.unicast):
            raise ValueError(f"node address {self.unicast:#06x} is not unicast")
        if not 0 <= self.initial_ttl <= MAX_TTL:
            raise ValueError(f"initial ttl {self.initial_ttl} outside 0..{MAX_TTL}")

    @property
    def subscriptions(self) -> Set[int]:
        """Union of all model subscription addresses on this node."""
        out: Set[int] = set()
        for registered in self.models.values():
            out |= registered.subscriptions
        return out


def next_seq(node: NodeState) -> int:
    """Hand out the next sequence number, strictly increasing, never reused."""
    if node.seq_counter >= SEQ_LIMIT - 1:
        raise SequenceExhausted("24-bit sequence space exhausted")
    value = node.seq_counter
    node.seq_counter = value + 1
    return value


def relay_decision(node: NodeState, pdu: NetworkPdu) -> Optional[NetworkPdu]:
    """Decide whether `node` retransmits `pdu`.

    Returns a ttl-decremented copy when the node has the relay feature, is on
    the advertising bearer, the ttl has at least one hop of life left after
    decrementing, and the PDU is not the node's own origination. Otherwise
    None. The input PDU is never modified.
    """
    if Feature.RELAY not in node.features:
        return None
    if Bearer.ADVERTISING not in node.bearers:
        return None
    if pdu.ttl < RELAY_TTL_THRESHOLD:
        return None
    if pdu.src == node.unicast:
        return None
    return replace(pdu, ttl=pdu.ttl - 1)
