"""Access layer: model registry, the emergency vendor model, generic on/off.

Models are addressable endpoints living on a node. A message reaches a model
iff the PDU destination is the node's unicast address or a member of that
model's subscription set. The emergency model carries three message kinds
(help request / help offer / status) in a fixed 7-byte payload:

    [opcode:1][message-code:1][request-id:4][flags:1]

Opcode and message code are redundant on purpose — the pairing is checked on
decode, so a corrupted or foreign payload that happens to authenticate is
still rejected.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, List, Optional, Set, Tuple

from . import security
from .core import (
    AccessPayload,
    BROADCAST_ADDR,
    NetworkPdu,
    NodeState,
    next_seq,
)
from .errors import (
    AuthenticationFailure,
    MalformedMessage,
    MissingKey,
    UnknownOpcode,
)

# ---------------------------------------------------------------------------
# Model identity
# ---------------------------------------------------------------------------

VENDOR_COMPANY_ID = 0xFFFF     # experimental/company-less vendor space
EMERGENCY_MODEL_NUMBER = 0x0001


@dataclass(frozen=True)
class ModelId:
    """Either a 16-bit generic model id or a (company, model) vendor pair."""

    model: int
    company: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0 <= self.model <= 0xFFFF:
            raise ValueError(f"model id {self.model:#x} outside 16 bits")
        if self.company is not None and not 0 <= self.company <= 0xFFFF:
            raise ValueError(f"company id {self.company:#x} outside 16 bits")

    @property
    def is_vendor(self) -> bool:
        return self.company is not None

    @classmethod
    def generic(cls, model: int) -> "ModelId":
        return cls(model=model)

    @classmethod
    def vendor(cls, company: int, model: int) -> "ModelId":
        return cls(model=model, company=company)


EMERGENCY_MODEL = ModelId.vendor(VENDOR_COMPANY_ID, EMERGENCY_MODEL_NUMBER)
ONOFF_MODEL = ModelId.generic(0x1000)


# ---------------------------------------------------------------------------
# Emergency message codec
# ---------------------------------------------------------------------------

class EmergencyKind(IntEnum):
    HELP_REQUEST = 0xE1
    HELP_OFFER = 0xE2
    STATUS = 0xE3


# opcode <-> message-code pairing; both directions checked on decode
_MESSAGE_CODE = {
    EmergencyKind.HELP_REQUEST: 0x0A,
    EmergencyKind.HELP_OFFER: 0x0B,
    EmergencyKind.STATUS: 0x0C,
}

_EMERGENCY_PARAMS = struct.Struct(">BIB")  # message-code, request-id, flags
EMERGENCY_PAYLOAD_SIZE = 1 + _EMERGENCY_PARAMS.size  # 7 bytes with the opcode


@dataclass(frozen=True)
class EmergencyMessage:
    kind: EmergencyKind
    request_id: int
    flags: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.request_id <= 0xFFFFFFFF:
            raise ValueError(f"request id {self.request_id} outside 32 bits")
        if not 0 <= self.flags <= 0xFF:
            raise ValueError(f"flags {self.flags:#x} outside one byte")


def encode_emergency(message: EmergencyMessage) -> AccessPayload:
    params = _EMERGENCY_PARAMS.pack(
        _MESSAGE_CODE[message.kind], message.request_id, message.flags
    )
    return AccessPayload(int(message.kind), params)


def decode_emergency(payload: AccessPayload) -> EmergencyMessage:
    try:
        kind = EmergencyKind(payload.opcode)
    except ValueError:
        raise UnknownOpcode(f"opcode {payload.opcode:#04x} is not an emergency opcode") from None
    if len(payload.parameters) != _EMERGENCY_PARAMS.size:
        raise MalformedMessage(
            f"emergency parameters must be {_EMERGENCY_PARAMS.size} bytes,"
            f" got {len(payload.parameters)}"
        )
    code, request_id, flags = _EMERGENCY_PARAMS.unpack(payload.parameters)
    if code != _MESSAGE_CODE[kind]:
        raise MalformedMessage(
            f"message code {code:#04x} does not pair with opcode {payload.opcode:#04x}"
        )
    return EmergencyMessage(kind=kind, request_id=request_id, flags=flags)


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

@dataclass
class RegisteredModel:
    """One model instance on one node."""

    model_id: ModelId
    subscriptions: Set[int] = field(default_factory=set)
    responder: bool = False    # emergency model: answer help requests?
    onoff: bool = False        # on/off model: last set value


def register_model(
    node: NodeState,
    model_id: ModelId,
    subscriptions: Optional[Set[int]] = None,
    responder: bool = False,
) -> RegisteredModel:
    registered = RegisteredModel(
        model_id=model_id,
        subscriptions=set(subscriptions or ()),
        responder=responder,
    )
    node.models[model_id] = registered
    return registered


def register_emergency_model(
    node: NodeState, responder: bool = False, subscriptions: Optional[Set[int]] = None
) -> RegisteredModel:
    """Register the emergency model; it listens on broadcast by default."""
    subs = set(subscriptions) if subscriptions is not None else {BROADCAST_ADDR}
    return register_model(node, EMERGENCY_MODEL, subs, responder=responder)


# ---------------------------------------------------------------------------
# Generic on/off (local state only; no wire opcodes in this stack)
# ---------------------------------------------------------------------------

def onoff_set(node: NodeState, value: bool) -> None:
    registered = node.models.get(ONOFF_MODEL)
    if registered is None:
        registered = register_model(node, ONOFF_MODEL)
    registered.onoff = bool(value)


def onoff_get(node: NodeState) -> bool:
    registered = node.models.get(ONOFF_MODEL)
    return False if registered is None else registered.onoff


# ---------------------------------------------------------------------------
# Publish / unseal / dispatch
# ---------------------------------------------------------------------------

def publish(
    node: NodeState,
    payload: AccessPayload,
    dst: int,
    app_key_index: int = 0,
    ttl: Optional[int] = None,
) -> NetworkPdu:
    """Seal an access payload into a fresh network PDU originating at `node`.

    Application seal first, network seal around it; the node's own cache is
    primed with the new (src, seq) so looped-back copies of the origination
    are never redelivered or relayed.
    """
    app_key = node.app_keys.get(app_key_index)
    if app_key is None:
        raise MissingKey(f"app key index {app_key_index} not installed")
    net_key = node.net_keys.get(app_key.bound_net_key)
    if net_key is None:
        raise MissingKey(f"net key index {app_key.bound_net_key} not installed")

    seq = next_seq(node)
    nonce = security.message_nonce(node.unicast, seq)
    app_ct, app_tag = security.seal_application(app_key, payload.encode(), nonce)

    bound = (
        bytes([net_key.index])
        + seq.to_bytes(3, "big")
        + node.unicast.to_bytes(2, "big")
        + dst.to_bytes(2, "big")
    )
    net_ct, net_tag = security.seal_network(net_key, bound, app_ct + app_tag, nonce)
    pdu = NetworkPdu(
        net_key_id=net_key.index,
        ttl=node.initial_ttl if ttl is None else ttl,
        seq=seq,
        src=node.unicast,
        dst=dst,
        ciphertext=net_ct,
        tag=net_tag,
    )
    node.cache.check_insert(pdu.src, pdu.seq)
    return pdu


def publish_emergency(
    node: NodeState,
    message: EmergencyMessage,
    dst: int = BROADCAST_ADDR,
    app_key_index: int = 0,
) -> NetworkPdu:
    return publish(node, encode_emergency(message), dst, app_key_index)


def open_access_from_inner(node: NodeState, pdu: NetworkPdu, inner: bytes) -> AccessPayload:
    """Open the application seal given the already-opened network plaintext.

    Tries every AppKey bound to the PDU's subnet; the 4-byte tag arbitrates.
    Raises MissingKey when the node holds no applicable AppKey at all and
    AuthenticationFailure when none of them verifies.
    """
    if len(inner) < security.TAG_SIZE + 1:
        raise MalformedMessage("sealed payload too short for an application tag")
    app_ct, app_tag = inner[: -security.TAG_SIZE], inner[-security.TAG_SIZE :]
    nonce = security.message_nonce(pdu.src, pdu.seq)

    candidates = [k for k in node.app_keys.values() if k.bound_net_key == pdu.net_key_id]
    if not candidates:
        raise MissingKey("no app key bound to this subnet")
    for app_key in candidates:
        try:
            return AccessPayload.decode(security.open_application(app_key, app_ct, app_tag, nonce))
        except AuthenticationFailure:
            continue
    raise AuthenticationFailure("no installed app key opens this payload")


def unseal_access(node: NodeState, pdu: NetworkPdu) -> AccessPayload:
    """Open both seals of a received PDU (network outer, application inner)."""
    net_key = node.net_keys.get(pdu.net_key_id)
    if net_key is None:
        raise MissingKey(f"net key index {pdu.net_key_id} not installed")
    nonce = security.message_nonce(pdu.src, pdu.seq)
    inner = security.open_network(net_key, pdu.bound_header(), pdu.ciphertext, pdu.tag, nonce)
    return open_access_from_inner(node, pdu, inner)


def interested(node: NodeState, dst: int) -> bool:
    """Would any endpoint on this node accept a PDU addressed to `dst`?"""
    return dst == node.unicast or dst in node.subscriptions


def dispatch(
    node: NodeState, src: int, dst: int, payload: AccessPayload
) -> List[Tuple[ModelId, object]]:
    """Deliver a decoded access payload to every matching registered model.

    Returns (model id, decoded message) pairs. Models whose opcode space does
    not cover the payload simply do not match; nothing is raised here.
    """
    deliveries: List[Tuple[ModelId, object]] = []
    for model_id, registered in node.models.items():
        if dst != node.unicast and dst not in registered.subscriptions:
            continue
        if model_id == EMERGENCY_MODEL:
            try:
                deliveries.append((model_id, decode_emergency(payload)))
            except (UnknownOpcode, MalformedMessage):
                continue
        else:
            deliveries.append((model_id, payload))
    return deliveries


def auto_respond(
    node: NodeState, incoming: EmergencyMessage, from_addr: int
) -> Optional[EmergencyMessage]:
    """Responder behaviour: a help request is answered with a help offer
    carrying the same request id. Offers and status messages get no reply.
    """
    registered = node.models.get(EMERGENCY_MODEL)
    if registered is None or not registered.responder:
        return None
    if incoming.kind is not EmergencyKind.HELP_REQUEST:
        return None
    return EmergencyMessage(kind=EmergencyKind.HELP_OFFER, request_id=incoming.request_id)
