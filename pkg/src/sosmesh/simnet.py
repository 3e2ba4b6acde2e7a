"""Deterministic discrete-event simulation of a flooding mesh deployment.

The simulator is a pure function of (topology, radio model, seed): events sit
in a time-ordered queue, ties resolve by insertion order, and every random
draw (link loss, delivery jitter, relay jitter) comes from per-node generators
seeded from the master seed. Two runs with identical inputs produce
byte-identical traces.

Radio model: unit disk. A transmission reaches every other advertising-bearer
node within range on the same floor, and within half range on an adjacent
floor; each potential delivery is lost independently with probability
min(1, base_loss + interference_loss). Nodes never receive their own
transmissions.

Proxy links (client <-> server) are modelled as lossless, ordered byte pipes
with a fixed per-direction latency, carrying segmented proxy frames.
"""

from __future__ import annotations

import heapq
import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

from . import models as access
from . import security
from .core import (
    BROADCAST_ADDR,
    Bearer,
    HEADER_SIZE,
    NetworkPdu,
    NodeState,
    TAG_SIZE,
    cache_check_insert,
    decode_network_pdu,
    encode_network_pdu,
    relay_decision,
)
from .errors import (
    AuthenticationFailure,
    MalformedMessage,
    MalformedPdu,
    MissingKey,
    NoActiveLink,
)
from .models import EmergencyMessage
from .proxy import ProxyLink, ProxyMessageType, ProxyPdu, proxy_reassemble, proxy_segment

DEFAULT_RELAY_JITTER_MS = (5.0, 25.0)
DEFAULT_LINK_LATENCY_MS = 30.0

# Drop reasons (diagnostic counters)
DROP_MALFORMED = "malformed"
DROP_UNKNOWN_KEY = "auth"            # no installed NetKey authenticates the frame
DROP_DUPLICATE = "duplicate"
DROP_APP_AUTH = "app_auth"           # network layer fine, application seal does not open
DROP_NO_APP_KEY = "no_app_key"


@lru_cache(maxsize=256)
def _privacy_for(net_key: security.NetKey) -> security.PrivacyKey:
    return security.derive_privacy_key(net_key)


@dataclass(frozen=True)
class RadioModel:
    """Shared channel parameters for one simulation."""

    range_m: float = 10.0
    base_loss: float = 0.0
    interference_loss: float = 0.0
    per_hop_latency_ms: float = 20.0
    delivery_jitter_ms: float = 0.0       # uniform in [-j, +j] around the latency
    cross_floor_factor: float = 0.5       # range multiplier between adjacent floors

    def __post_init__(self) -> None:
        if self.range_m <= 0:
            raise ValueError("radio range must be positive")
        for name in ("base_loss", "interference_loss"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be within [0, 1], got {value}")
        if self.per_hop_latency_ms < 0 or self.delivery_jitter_ms < 0:
            raise ValueError("latency and jitter must be non-negative")
        if self.delivery_jitter_ms > self.per_hop_latency_ms:
            raise ValueError("delivery jitter cannot exceed the latency itself")

    @property
    def loss_probability(self) -> float:
        return min(1.0, self.base_loss + self.interference_loss)


@dataclass
class GattLink:
    """One client <-> server connection with per-side reassembly state."""

    client_id: str
    server_id: str
    mtu: int = 20
    latency_ms: float = DEFAULT_LINK_LATENCY_MS
    client_rx: ProxyLink = field(init=False)
    server_rx: ProxyLink = field(init=False)

    def __post_init__(self) -> None:
        self.client_rx = ProxyLink(mtu=self.mtu)  # validates the MTU too
        self.server_rx = ProxyLink(mtu=self.mtu)


@dataclass
class SimNode:
    """A mesh node placed in space, wrapping its protocol state."""

    node_id: str
    state: NodeState
    x: float = 0.0
    y: float = 0.0
    floor: int = 0
    relay_jitter_ms: Tuple[float, float] = DEFAULT_RELAY_JITTER_MS
    responder_processing_ms: float = 0.0
    rng: random.Random = field(default_factory=random.Random)
    drops: Counter = field(default_factory=Counter)
    links: List[GattLink] = field(default_factory=list)

    @property
    def is_advertising(self) -> bool:
        return Bearer.ADVERTISING in self.state.bearers


@dataclass(frozen=True)
class TraceEvent:
    """One structured record; the full list is the run's audit trail."""

    t: float
    kind: str
    node: str
    info: dict

    def to_json(self) -> str:
        record = {"t": round(self.t, 6), "kind": self.kind, "node": self.node}
        record.update(self.info)
        return json.dumps(record, sort_keys=True)


def trace_to_ndjson(trace: List[TraceEvent]) -> str:
    """Newline-delimited serialization; equal runs serialize identically."""
    return "\n".join(event.to_json() for event in trace) + "\n"


class Simulation:
    """Event loop, radio, and proxy plumbing for one deployment."""

    def __init__(
        self,
        radio: Optional[RadioModel] = None,
        seed: object = 0,
        relay_jitter_ms: Tuple[float, float] = DEFAULT_RELAY_JITTER_MS,
    ) -> None:
        self.radio = radio or RadioModel()
        self.seed = seed
        self.default_relay_jitter = relay_jitter_ms
        self.nodes: Dict[str, SimNode] = {}
        self.by_unicast: Dict[int, str] = {}
        self.trace: List[TraceEvent] = []
        self.trace_kinds: Optional[frozenset] = None  # None = record everything
        self.wire_taps: list = []        # callables (sender_id, frame_bytes, t)
        self.now: float = 0.0
        self._queue: list = []
        self._tick: int = 0
        self._neighbors: Optional[Dict[str, List[str]]] = None

    # ------------------------------------------------------------- topology

    def add_node(
        self,
        node_id: str,
        state: NodeState,
        x: float = 0.0,
        y: float = 0.0,
        floor: int = 0,
        relay_jitter_ms: Optional[Tuple[float, float]] = None,
        responder_processing_ms: float = 0.0,
    ) -> SimNode:
        if node_id in self.nodes:
            raise ValueError(f"duplicate node id {node_id!r}")
        if state.unicast in self.by_unicast:
            raise ValueError(f"duplicate unicast address {state.unicast:#06x}")
        node = SimNode(
            node_id=node_id,
            state=state,
            x=x,
            y=y,
            floor=floor,
            relay_jitter_ms=relay_jitter_ms or self.default_relay_jitter,
            responder_processing_ms=responder_processing_ms,
            rng=random.Random(f"{self.seed}/{node_id}"),
        )
        self.nodes[node_id] = node
        self.by_unicast[state.unicast] = node_id
        self._neighbors = None
        return node

    def connect(
        self,
        client_id: str,
        server_id: str,
        mtu: int = 20,
        latency_ms: float = DEFAULT_LINK_LATENCY_MS,
    ) -> GattLink:
        client, server = self.nodes[client_id], self.nodes[server_id]
        link = GattLink(client_id=client_id, server_id=server_id, mtu=mtu, latency_ms=latency_ms)
        client.links.append(link)
        server.links.append(link)
        return link

    def _in_range(self, a: SimNode, b: SimNode) -> bool:
        dfloor = abs(a.floor - b.floor)
        if dfloor > 1:
            return False
        reach = self.radio.range_m * (self.radio.cross_floor_factor if dfloor == 1 else 1.0)
        return math.dist((a.x, a.y), (b.x, b.y)) <= reach

    def neighbors(self, node_id: str) -> List[str]:
        """Advertising-bearer nodes this node's transmissions can reach."""
        if self._neighbors is None:
            ids = list(self.nodes)  # insertion order, deterministic
            table: Dict[str, List[str]] = {i: [] for i in ids}
            for i in ids:
                a = self.nodes[i]
                for j in ids:
                    if i == j:
                        continue
                    b = self.nodes[j]
                    if b.is_advertising and self._in_range(a, b):
                        table[i].append(j)
            self._neighbors = table
        return self._neighbors[node_id]

    # ----------------------------------------------------------- event queue

    def _schedule(self, at_ms: float, handler, *args) -> None:
        heapq.heappush(self._queue, (at_ms, self._tick, handler, args))
        self._tick += 1

    def run(self, until_ms: Optional[float] = None) -> List[TraceEvent]:
        """Drain the event queue (up to `until_ms`) and return the trace."""
        while self._queue:
            if until_ms is not None and self._queue[0][0] > until_ms:
                break
            at, _, handler, args = heapq.heappop(self._queue)
            self.now = at
            handler(*args)
        return self.trace

    def _record(self, kind: str, node_id: str, **info) -> None:
        if self.trace_kinds is not None and kind not in self.trace_kinds:
            return
        self.trace.append(TraceEvent(t=self.now, kind=kind, node=node_id, info=info))

    # ----------------------------------------------------------------- radio

    def _transmit(self, sender_id: str, pdu: NetworkPdu) -> None:
        """Put a PDU on the advertising bearer: obfuscate, then fan out."""
        sender = self.nodes[sender_id]
        net_key = sender.state.net_keys.get(pdu.net_key_id)
        if net_key is None:
            raise MissingKey(f"node {sender_id} holds no net key {pdu.net_key_id}")
        encoded = encode_network_pdu(pdu)
        seed = security.keystream_seed(pdu.ciphertext, pdu.tag)
        masked = security.obfuscate_header(
            _privacy_for(net_key), encoded[:HEADER_SIZE], seed
        )
        frame = masked + encoded[HEADER_SIZE:]

        self._record(
            "tx", sender_id, ttl=pdu.ttl, seq=pdu.seq, src=pdu.src, dst=pdu.dst
        )
        for tap in self.wire_taps:
            tap(sender_id, frame, self.now)

        loss = self.radio.loss_probability
        latency = self.radio.per_hop_latency_ms
        jitter = self.radio.delivery_jitter_ms
        for neighbor_id in self.neighbors(sender_id):
            if loss > 0.0 and sender.rng.random() < loss:
                self._record("lost", neighbor_id, src=pdu.src, seq=pdu.seq)
                continue
            delay = latency + (sender.rng.uniform(-jitter, jitter) if jitter > 0.0 else 0.0)
            self._schedule(self.now + delay, self._radio_receive, neighbor_id, frame)

    def _accept(self, node: SimNode, frame: bytes) -> Optional[Tuple[NetworkPdu, bytes]]:
        """Deobfuscate, authenticate, and dedup a received frame.

        Returns (pdu, network plaintext) on acceptance; None on a drop (the
        reason is counted and traced).
        """
        if not HEADER_SIZE + TAG_SIZE <= len(frame) <= 29:
            self._drop(node, DROP_MALFORMED, length=len(frame))
            return None
        seed = security.keystream_seed(frame[HEADER_SIZE:-TAG_SIZE], frame[-TAG_SIZE:])
        saw_malformed = False
        for net_key in node.state.net_keys.values():
            if net_key.index > 0xFF:
                continue  # cannot appear in the one-byte wire field
            header = security.deobfuscate_header(
                _privacy_for(net_key), frame[:HEADER_SIZE], seed
            )
            if header[0] != net_key.index:
                continue
            try:
                pdu = decode_network_pdu(header + frame[HEADER_SIZE:])
            except MalformedPdu:
                saw_malformed = True
                continue
            nonce = security.message_nonce(pdu.src, pdu.seq)
            try:
                inner = security.open_network(
                    net_key, pdu.bound_header(), pdu.ciphertext, pdu.tag, nonce
                )
            except AuthenticationFailure:
                continue
            if not cache_check_insert(node.state.cache, pdu.src, pdu.seq):
                self._drop(node, DROP_DUPLICATE, src=pdu.src, seq=pdu.seq)
                return None
            return pdu, inner
        self._drop(node, DROP_MALFORMED if saw_malformed else DROP_UNKNOWN_KEY)
        return None

    def _drop(self, node: SimNode, reason: str, **info) -> None:
        node.drops[reason] += 1
        self._record("drop", node.node_id, reason=reason, **info)

    def _radio_receive(self, receiver_id: str, frame: bytes) -> None:
        node = self.nodes[receiver_id]
        accepted = self._accept(node, frame)
        if accepted is None:
            return
        pdu, inner = accepted
        self._deliver_local(node, pdu, inner)
        self._forward_to_clients(node, frame, pdu, exclude=None)

        relayed = relay_decision(node.state, pdu)
        if relayed is not None:
            lo, hi = node.relay_jitter_ms
            delay = node.rng.uniform(lo, hi) if hi > lo else lo
            self._record("relay", receiver_id, seq=pdu.seq, src=pdu.src, ttl=relayed.ttl)
            self._schedule(self.now + delay, self._transmit, receiver_id, relayed)

    # ---------------------------------------------------------- access layer

    def _deliver_local(self, node: SimNode, pdu: NetworkPdu, inner: bytes) -> None:
        if not access.interested(node.state, pdu.dst):
            return
        try:
            payload = access.open_access_from_inner(node.state, pdu, inner)
        except MissingKey:
            self._drop(node, DROP_NO_APP_KEY, src=pdu.src, seq=pdu.seq)
            return
        except AuthenticationFailure:
            self._drop(node, DROP_APP_AUTH, src=pdu.src, seq=pdu.seq)
            return
        except MalformedMessage:
            self._drop(node, DROP_MALFORMED, src=pdu.src, seq=pdu.seq)
            return

        for model_id, message in access.dispatch(node.state, pdu.src, pdu.dst, payload):
            info = {
                "src": pdu.src,
                "dst": pdu.dst,
                "seq": pdu.seq,
                "ttl": pdu.ttl,
                "model": "emergency" if model_id == access.EMERGENCY_MODEL else "other",
            }
            if isinstance(message, EmergencyMessage):
                info["message"] = message.kind.name.lower()
                info["request_id"] = message.request_id
            self._record("deliver", node.node_id, **info)

            if isinstance(message, EmergencyMessage):
                reply = access.auto_respond(node.state, message, pdu.src)
                if reply is not None:
                    self._schedule(
                        self.now + node.responder_processing_ms,
                        self._originate_emergency,
                        node.node_id,
                        reply,
                        BROADCAST_ADDR,
                    )

    # ----------------------------------------------------------- origination

    def inject_emergency(
        self, node_id: str, message: EmergencyMessage, at_ms: float, dst: int = BROADCAST_ADDR
    ) -> None:
        """Schedule `node_id` to publish an emergency message at `at_ms`."""
        self._schedule(at_ms, self._originate_emergency, node_id, message, dst)

    def _originate_emergency(self, node_id: str, message: EmergencyMessage, dst: int) -> None:
        node = self.nodes[node_id]
        pdu = access.publish_emergency(node.state, message, dst)
        self._record(
            "inject",
            node_id,
            message=message.kind.name.lower(),
            request_id=message.request_id,
            seq=pdu.seq,
            dst=dst,
        )
        if node.is_advertising:
            self._transmit(node_id, pdu)
        else:
            self._send_via_link(node, pdu)

    def _send_via_link(self, client: SimNode, pdu: NetworkPdu) -> None:
        """Client-side publish path: frame the PDU and push it up the link."""
        if not client.links:
            raise NoActiveLink(f"node {client.node_id} has no proxy link")
        link = client.links[0]
        net_key = client.state.net_keys[pdu.net_key_id]
        encoded = encode_network_pdu(pdu)
        seed = security.keystream_seed(pdu.ciphertext, pdu.tag)
        frame = (
            security.obfuscate_header(_privacy_for(net_key), encoded[:HEADER_SIZE], seed)
            + encoded[HEADER_SIZE:]
        )
        self._link_send(link, to_server=True, payload=frame)

    # ----------------------------------------------------------- proxy links

    def _link_send(self, link: GattLink, to_server: bool, payload: bytes) -> None:
        """Segment and schedule delivery over one link direction (reliable)."""
        for segment in proxy_segment(ProxyMessageType.NETWORK_PDU, payload, link.mtu):
            self._schedule(
                self.now + link.latency_ms, self._link_deliver, link, to_server, segment.encode()
            )

    def _link_deliver(self, link: GattLink, to_server: bool, raw: bytes) -> None:
        frame = ProxyPdu.decode(raw)
        buffer = link.server_rx if to_server else link.client_rx
        complete = proxy_reassemble(buffer, frame)
        if complete is None:
            return
        message_type, payload = complete
        if message_type != ProxyMessageType.NETWORK_PDU:
            receiver = link.server_id if to_server else link.client_id
            self._record("proxy_message", receiver, type=int(message_type))
            return
        if to_server:
            self._bridge_inject(self.nodes[link.server_id], payload, origin=link)
        else:
            self._client_receive(self.nodes[link.client_id], payload)

    def _bridge_inject(self, server: SimNode, frame: bytes, origin: GattLink) -> None:
        """Server side of a client publish: accept, then put on the air verbatim.

        The frame keeps its TTL (this is an origination on the client's
        behalf, not a relay) and the server does not additionally relay its
        own injection.
        """
        accepted = self._accept(server, frame)
        if accepted is None:
            return
        pdu, inner = accepted
        self._record("bridge", server.node_id, src=pdu.src, seq=pdu.seq, ttl=pdu.ttl)
        self._deliver_local(server, pdu, inner)
        self._forward_to_clients(server, frame, pdu, exclude=origin)
        self._transmit(server.node_id, pdu)

    def _forward_to_clients(
        self, node: SimNode, frame: bytes, pdu: NetworkPdu, exclude: Optional[GattLink]
    ) -> None:
        """Proxy servers push every accepted PDU to their connected clients,
        except back down the link it arrived on."""
        for link in node.links:
            if link.server_id != node.node_id or link is exclude:
                continue
            self._record("to_client", link.client_id, src=pdu.src, seq=pdu.seq, ttl=pdu.ttl)
            self._link_send(link, to_server=False, payload=frame)

    def _client_receive(self, client: SimNode, frame: bytes) -> None:
        accepted = self._accept(client, frame)
        if accepted is None:
            return
        pdu, inner = accepted
        self._deliver_local(client, pdu, inner)
        # No relay and no forwarding: clients are leaves by construction.
