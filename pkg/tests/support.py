"""Shared builders for the test suite.

Everything here leans on public package APIs only; the BFS oracle at the
bottom is deliberately independent of the simulator so flooding results can
be checked against plain graph reachability.
"""

import math
import random
from collections import deque
from typing import Dict, Iterable, List, Optional, Tuple

from sosmesh.core import Bearer, Feature, NodeState
from sosmesh.models import (
    EmergencyKind,
    EmergencyMessage,
    register_emergency_model,
)
from sosmesh.security import AppKey, NetKey
from sosmesh.simnet import RadioModel, Simulation

NO_JITTER = (0.0, 0.0)


def make_keys(seed: int = 0, key_index: int = 0) -> Tuple[NetKey, AppKey]:
    """Deterministic key pair for tests that need shared credentials."""
    rng = random.Random(f"keys/{seed}")
    net = NetKey(rng.randbytes(16), index=key_index)
    app = AppKey(rng.randbytes(16), index=0, bound_net_key=key_index)
    return net, app


def make_state(
    unicast: int,
    net: NetKey,
    app: Optional[AppKey] = None,
    relay: bool = True,
    bearers: Iterable[Bearer] = (Bearer.ADVERTISING,),
    responder: bool = False,
    initial_ttl: int = 127,
    register: bool = True,
) -> NodeState:
    """A mesh node with shared keys and the emergency model installed."""
    state = NodeState(
        unicast=unicast,
        features={Feature.RELAY} if relay else set(),
        bearers=set(bearers),
        initial_ttl=initial_ttl,
    )
    state.net_keys[net.index] = net
    if app is not None:
        state.app_keys[app.index] = app
    if register:
        register_emergency_model(state, responder=responder)
    return state


def lossless_radio(
    range_m: float = 1.5,
    per_hop_latency_ms: float = 20.0,
    base_loss: float = 0.0,
) -> RadioModel:
    return RadioModel(
        range_m=range_m,
        base_loss=base_loss,
        per_hop_latency_ms=per_hop_latency_ms,
        delivery_jitter_ms=0.0,
    )


def line_simulation(
    n: int,
    seed: object = 0,
    base_loss: float = 0.0,
    relay_jitter: Tuple[float, float] = NO_JITTER,
    initial_ttl: int = 127,
    keys_seed: int = 0,
) -> Simulation:
    """n mesh relays in a row, 1 m apart, radio range 1.5 m (neighbors only)."""
    net, app = make_keys(keys_seed)
    sim = Simulation(
        radio=lossless_radio(base_loss=base_loss),
        seed=seed,
        relay_jitter_ms=relay_jitter,
    )
    for k in range(n):
        state = make_state(0x0001 + k, net, app, initial_ttl=initial_ttl)
        sim.add_node(f"n{k}", state, x=float(k), y=0.0)
    return sim


def complete_simulation(n: int, seed: object = 0) -> Simulation:
    """n mesh relays all within radio range of each other."""
    net, app = make_keys(0)
    sim = Simulation(
        radio=lossless_radio(range_m=100.0), seed=seed, relay_jitter_ms=NO_JITTER
    )
    for k in range(n):
        state = make_state(0x0001 + k, net, app)
        # a small circle keeps coordinates distinct but all mutually in range
        angle = 2.0 * math.pi * k / max(n, 1)
        sim.add_node(f"n{k}", state, x=math.cos(angle), y=math.sin(angle))
    return sim


def status_message(request_id: int = 1, flags: int = 0) -> EmergencyMessage:
    """Fire-and-forget broadcast; nothing auto-responds to these."""
    return EmergencyMessage(EmergencyKind.STATUS, request_id=request_id, flags=flags)


def help_request(request_id: int = 1, flags: int = 0) -> EmergencyMessage:
    return EmergencyMessage(EmergencyKind.HELP_REQUEST, request_id=request_id, flags=flags)


def flood_and_collect(sim: Simulation, origin: str, request_id: int = 1):
    """Inject one STATUS broadcast and return {node_id: (hops, time_ms)}."""
    sim.inject_emergency(origin, status_message(request_id), at_ms=0.0)
    trace = sim.run()
    initial = sim.nodes[origin].state.initial_ttl
    arrivals: Dict[str, Tuple[int, float]] = {}
    for event in trace:
        if event.kind == "deliver" and event.info.get("request_id") == request_id:
            if event.node not in arrivals:
                arrivals[event.node] = (initial - event.info["ttl"] + 1, event.t)
    return arrivals, trace


def count_events(trace, kind: str) -> int:
    return sum(1 for event in trace if event.kind == kind)


# ---------------------------------------------------------------------------
# Independent reachability oracle (pure graph code, no simulator imports)
# ---------------------------------------------------------------------------

def disk_adjacency(
    positions: Dict[str, Tuple[float, float]], range_m: float
) -> Dict[str, List[str]]:
    ids = list(positions)
    table: Dict[str, List[str]] = {i: [] for i in ids}
    for i in ids:
        for j in ids:
            if i != j and math.dist(positions[i], positions[j]) <= range_m:
                table[i].append(j)
    return table


def bfs_hops(adjacency: Dict[str, List[str]], start: str) -> Dict[str, int]:
    dist = {start: 0}
    queue = deque([start])
    while queue:
        current = queue.popleft()
        for neighbor in adjacency[current]:
            if neighbor not in dist:
                dist[neighbor] = dist[current] + 1
                queue.append(neighbor)
    return dist


def grown_geometric_positions(
    rng: random.Random, n: int, range_m: float
) -> Dict[str, Tuple[float, float]]:
    """Connected-by-construction random layout: each node lands near an
    existing one, so the unit-disk graph always has a spanning tree."""
    positions: Dict[str, Tuple[float, float]] = {"n0": (0.0, 0.0)}
    for k in range(1, n):
        anchor = positions[f"n{rng.randrange(k)}"]
        radius = range_m * rng.uniform(0.2, 0.9)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        positions[f"n{k}"] = (
            anchor[0] + radius * math.cos(angle),
            anchor[1] + radius * math.sin(angle),
        )
    return positions
