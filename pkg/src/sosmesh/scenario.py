"""Scenario files: the textual description of one deployment.

A scenario is plain structured text with three sections:

    [meta]      name, floor-plan dimensions, declared node counts,
                responder ids, spacing bounds, ttl/processing knobs
    [radio]     channel parameters (range, losses, latencies, jitters, mtu)
    [nodes]     one node per line:  id  role  x  y  floor  [feature tokens]

Roles are relay / proxy_server / proxy_client / source (the source is a proxy
client that injects the traffic). Parsing errors (syntax) raise ParseError;
consistency problems (counts that contradict the node table, out-of-bounds
placements, unknown responders) raise ValidationError.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple

from .core import Bearer, DEFAULT_INITIAL_TTL, Feature, MAX_TTL
from .errors import ParseError, ValidationError
from .models import register_emergency_model
from .proxy import MIN_MTU
from .provisioning import (
    IMPORTED_RANGE_FIRST,
    ProvisionerState,
    export_credentials,
    import_credentials,
    provision_device,
)
from .simnet import DEFAULT_LINK_LATENCY_MS, RadioModel, Simulation

ROLES = ("relay", "proxy_server", "proxy_client", "source")

_FEATURE_TOKENS = {"relay": Feature.RELAY, "proxy": Feature.PROXY}
_BEARER_TOKENS = {"adv": Bearer.ADVERTISING, "gatt": Bearer.GATT}

_DEFAULT_FEATURES: Dict[str, Tuple[Set[Feature], Set[Bearer]]] = {
    "relay": ({Feature.RELAY}, {Bearer.ADVERTISING}),
    "proxy_server": ({Feature.RELAY, Feature.PROXY}, {Bearer.ADVERTISING, Bearer.GATT}),
    "proxy_client": (set(), {Bearer.GATT}),
    "source": (set(), {Bearer.GATT}),
}


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    role: str
    x: float
    y: float
    floor: int
    features: Set[Feature]
    bearers: Set[Bearer]


@dataclass
class ScenarioConfig:
    """Parsed and validated scenario."""

    name: str
    width: float
    height: float
    floors: int
    nodes: List[NodeSpec]
    responders: List[str]
    declared_relays: int
    declared_proxy_servers: int
    declared_proxy_clients: int
    min_spacing: Optional[float] = None
    max_spacing: Optional[float] = None
    initial_ttl: int = DEFAULT_INITIAL_TTL
    responder_processing_ms: float = 0.0
    # radio section
    range_m: float = 10.0
    base_loss: float = 0.0
    interference_loss: float = 0.0
    per_hop_latency_ms: float = 20.0
    delivery_jitter_ms: float = 0.0
    relay_jitter_ms: Tuple[float, float] = (5.0, 25.0)
    link_latency_ms: float = DEFAULT_LINK_LATENCY_MS
    cross_floor_factor: float = 0.5
    mtu: int = 20

    def radio_model(self) -> RadioModel:
        return RadioModel(
            range_m=self.range_m,
            base_loss=self.base_loss,
            interference_loss=self.interference_loss,
            per_hop_latency_ms=self.per_hop_latency_ms,
            delivery_jitter_ms=self.delivery_jitter_ms,
            cross_floor_factor=self.cross_floor_factor,
        )

    @property
    def source_id(self) -> str:
        return next(n.node_id for n in self.nodes if n.role == "source")

    def node(self, node_id: str) -> NodeSpec:
        for spec in self.nodes:
            if spec.node_id == node_id:
                return spec
        raise KeyError(node_id)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_META_KEYS = {
    "name", "width", "height", "floors", "relays", "proxy_servers",
    "proxy_clients", "responders", "min_spacing", "max_spacing",
    "initial_ttl", "responder_processing",
}
_RADIO_KEYS = {
    "range", "base_loss", "interference_loss", "per_hop_latency",
    "delivery_jitter", "relay_jitter_min", "relay_jitter_max",
    "link_latency", "cross_floor_factor", "mtu",
}


def _number(raw: str, line_no: int) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ParseError(f"line {line_no}: {raw!r} is not a number") from None


def parse_scenario(text: str, default_name: str = "scenario") -> ScenarioConfig:
    meta: Dict[str, str] = {}
    radio: Dict[str, str] = {}
    node_lines: List[Tuple[int, List[str]]] = []
    section = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"line {line_no}: unterminated section header {line!r}")
            section = line[1:-1].strip().lower()
            if section not in ("meta", "radio", "nodes"):
                raise ParseError(f"line {line_no}: unknown section [{section}]")
            continue
        if section is None:
            raise ParseError(f"line {line_no}: content before any section header")
        if section in ("meta", "radio"):
            if "=" not in line:
                raise ParseError(f"line {line_no}: expected key = value")
            key, _, value = line.partition("=")
            key, value = key.strip().lower(), value.strip()
            allowed = _META_KEYS if section == "meta" else _RADIO_KEYS
            if key not in allowed:
                raise ParseError(f"line {line_no}: unknown [{section}] key {key!r}")
            target = meta if section == "meta" else radio
            if key in target:
                raise ParseError(f"line {line_no}: duplicate key {key!r}")
            target[key] = value
        else:
            node_lines.append((line_no, line.split()))

    # ----- nodes ------------------------------------------------------------
    nodes: List[NodeSpec] = []
    for line_no, tokens in node_lines:
        if len(tokens) < 5:
            raise ParseError(
                f"line {line_no}: node line needs `id role x y floor`, got {len(tokens)} fields"
            )
        node_id, role = tokens[0], tokens[1].lower()
        if role not in ROLES:
            raise ParseError(f"line {line_no}: unknown role {role!r}")
        x, y = _number(tokens[2], line_no), _number(tokens[3], line_no)
        floor_raw = _number(tokens[4], line_no)
        if floor_raw != int(floor_raw):
            raise ParseError(f"line {line_no}: floor must be an integer")
        features, bearers = (set(s) for s in _DEFAULT_FEATURES[role])
        if len(tokens) > 5:
            features, bearers = set(), set()
            for token in tokens[5:]:
                token = token.lower()
                if token in _FEATURE_TOKENS:
                    features.add(_FEATURE_TOKENS[token])
                elif token in _BEARER_TOKENS:
                    bearers.add(_BEARER_TOKENS[token])
                else:
                    raise ParseError(f"line {line_no}: unknown feature token {token!r}")
        nodes.append(NodeSpec(node_id, role, x, y, int(floor_raw), features, bearers))

    # ----- meta -------------------------------------------------------------
    def meta_number(key: str, default: Optional[float] = None) -> Optional[float]:
        if key not in meta:
            if default is None:
                raise ParseError(f"[meta] is missing required key {key!r}")
            return default
        return _number(meta[key], 0)

    width = meta_number("width")
    height = meta_number("height")
    floors = int(meta_number("floors", 1.0))
    declared_relays = int(meta_number("relays"))
    declared_servers = int(meta_number("proxy_servers"))
    declared_clients = int(meta_number("proxy_clients"))
    responders = meta.get("responders", "").replace(",", " ").split()

    config = ScenarioConfig(
        name=meta.get("name", default_name),
        width=width,
        height=height,
        floors=floors,
        nodes=nodes,
        responders=responders,
        declared_relays=declared_relays,
        declared_proxy_servers=declared_servers,
        declared_proxy_clients=declared_clients,
        min_spacing=meta_number("min_spacing", -1.0),
        max_spacing=meta_number("max_spacing", -1.0),
        initial_ttl=int(meta_number("initial_ttl", float(DEFAULT_INITIAL_TTL))),
        responder_processing_ms=meta_number("responder_processing", 0.0),
    )
    if config.min_spacing == -1.0:
        config.min_spacing = None
    if config.max_spacing == -1.0:
        config.max_spacing = None

    # ----- radio ------------------------------------------------------------
    def radio_number(key: str, default: float) -> float:
        return _number(radio[key], 0) if key in radio else default

    config.range_m = radio_number("range", config.range_m)
    config.base_loss = radio_number("base_loss", config.base_loss)
    config.interference_loss = radio_number("interference_loss", config.interference_loss)
    config.per_hop_latency_ms = radio_number("per_hop_latency", config.per_hop_latency_ms)
    config.delivery_jitter_ms = radio_number("delivery_jitter", config.delivery_jitter_ms)
    config.relay_jitter_ms = (
        radio_number("relay_jitter_min", config.relay_jitter_ms[0]),
        radio_number("relay_jitter_max", config.relay_jitter_ms[1]),
    )
    config.link_latency_ms = radio_number("link_latency", config.link_latency_ms)
    config.cross_floor_factor = radio_number("cross_floor_factor", config.cross_floor_factor)
    config.mtu = int(radio_number("mtu", float(config.mtu)))

    _validate(config)
    return config


def _validate(config: ScenarioConfig) -> None:
    seen: Set[str] = set()
    for spec in config.nodes:
        if spec.node_id in seen:
            raise ValidationError(f"duplicate node id {spec.node_id!r}")
        seen.add(spec.node_id)

    sources = [n for n in config.nodes if n.role == "source"]
    if len(sources) != 1:
        raise ValidationError(f"expected exactly one source node, found {len(sources)}")

    counts = {
        "relays": sum(1 for n in config.nodes if n.role == "relay"),
        "proxy_servers": sum(1 for n in config.nodes if n.role == "proxy_server"),
        # the source is a proxy client too
        "proxy_clients": sum(1 for n in config.nodes if n.role in ("proxy_client", "source")),
    }
    declared = {
        "relays": config.declared_relays,
        "proxy_servers": config.declared_proxy_servers,
        "proxy_clients": config.declared_proxy_clients,
    }
    for key, actual in counts.items():
        if declared[key] != actual:
            raise ValidationError(
                f"[meta] declares {declared[key]} {key}, node table has {actual}"
            )

    if not config.responders:
        raise ValidationError("[meta] must name at least one responder")
    for responder in config.responders:
        if responder not in seen:
            raise ValidationError(f"responder {responder!r} is not in the node table")
    if config.source_id in config.responders:
        raise ValidationError("the source cannot be its own responder")

    if config.floors < 1:
        raise ValidationError("floors must be at least 1")
    if not 0 <= config.initial_ttl <= MAX_TTL:
        raise ValidationError(f"initial_ttl {config.initial_ttl} outside 0..{MAX_TTL}")
    for spec in config.nodes:
        if not 0 <= spec.floor < config.floors:
            raise ValidationError(
                f"node {spec.node_id!r} on floor {spec.floor}, scenario has {config.floors}"
            )
        if not (0 <= spec.x <= config.width and 0 <= spec.y <= config.height):
            raise ValidationError(
                f"node {spec.node_id!r} at ({spec.x}, {spec.y}) outside the"
                f" {config.width} x {config.height} floor plan"
            )

    if len({n.role for n in config.nodes} & {"proxy_server"}) == 0 and any(
        n.role in ("proxy_client", "source") for n in config.nodes
    ):
        raise ValidationError("proxy clients need at least one proxy server")

    # spacing bounds, when declared
    if config.min_spacing is not None:
        for i, a in enumerate(config.nodes):
            for b in config.nodes[i + 1 :]:
                if a.floor == b.floor and math.dist((a.x, a.y), (b.x, b.y)) < config.min_spacing:
                    raise ValidationError(
                        f"nodes {a.node_id!r} and {b.node_id!r} closer than"
                        f" min_spacing {config.min_spacing}"
                    )
    if config.max_spacing is not None:
        for a in config.nodes:
            nearest = min(
                (
                    math.dist((a.x, a.y), (b.x, b.y))
                    for b in config.nodes
                    if b is not a and abs(b.floor - a.floor) <= 1
                ),
                default=math.inf,
            )
            if nearest > config.max_spacing:
                raise ValidationError(
                    f"node {a.node_id!r} has no neighbor within max_spacing"
                    f" {config.max_spacing} (nearest {nearest:.2f})"
                )

    try:
        config.radio_model()
    except ValueError as exc:
        raise ValidationError(f"radio parameters invalid: {exc}") from None
    lo, hi = config.relay_jitter_ms
    if lo < 0 or hi < lo:
        raise ValidationError(f"relay jitter bounds ({lo}, {hi}) are not ordered")
    if config.link_latency_ms < 0 or config.responder_processing_ms < 0:
        raise ValidationError("latencies must be non-negative")
    if config.mtu < MIN_MTU:
        raise ValidationError(f"mtu {config.mtu} below the link minimum {MIN_MTU}")


def render_scenario(config: ScenarioConfig) -> str:
    """Render a config back to scenario-file text (inverse of parse_scenario)."""
    lines = [
        "[meta]",
        f"name = {config.name}",
        f"width = {config.width}",
        f"height = {config.height}",
        f"floors = {config.floors}",
        f"relays = {config.declared_relays}",
        f"proxy_servers = {config.declared_proxy_servers}",
        f"proxy_clients = {config.declared_proxy_clients}",
        f"responders = {' '.join(config.responders)}",
        f"initial_ttl = {config.initial_ttl}",
        f"responder_processing = {config.responder_processing_ms}",
    ]
    if config.min_spacing is not None:
        lines.append(f"min_spacing = {config.min_spacing}")
    if config.max_spacing is not None:
        lines.append(f"max_spacing = {config.max_spacing}")
    lines += [
        "",
        "[radio]",
        f"range = {config.range_m}",
        f"base_loss = {config.base_loss}",
        f"interference_loss = {config.interference_loss}",
        f"per_hop_latency = {config.per_hop_latency_ms}",
        f"delivery_jitter = {config.delivery_jitter_ms}",
        f"relay_jitter_min = {config.relay_jitter_ms[0]}",
        f"relay_jitter_max = {config.relay_jitter_ms[1]}",
        f"link_latency = {config.link_latency_ms}",
        f"cross_floor_factor = {config.cross_floor_factor}",
        f"mtu = {config.mtu}",
        "",
        "[nodes]",
    ]
    feature_names = {v: k for k, v in _FEATURE_TOKENS.items()}
    bearer_names = {v: k for k, v in _BEARER_TOKENS.items()}
    for spec in config.nodes:
        line = f"{spec.node_id} {spec.role} {spec.x} {spec.y} {spec.floor}"
        default_features, default_bearers = _DEFAULT_FEATURES[spec.role]
        if spec.features != default_features or spec.bearers != default_bearers:
            tokens = sorted(feature_names[f] for f in spec.features)
            tokens += sorted(bearer_names[b] for b in spec.bearers)
            line += " " + " ".join(tokens)
        lines.append(line)
    return "\n".join(lines) + "\n"


def load_scenario(path: "str | Path") -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario(text, default_name=path.stem)


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped inside the package (smart_home, smart_office)."""
    folder = resources.files("sosmesh").joinpath("scenarios")
    candidate = folder.joinpath(f"{name}.scn")
    if not candidate.is_file():
        available = sorted(
            entry.name[: -len(".scn")]
            for entry in folder.iterdir()
            if entry.name.endswith(".scn")
        )
        raise FileNotFoundError(
            f"no bundled scenario named {name!r}; available: {', '.join(available)}"
        )
    with resources.as_file(candidate) as path:
        return Path(path)


# ---------------------------------------------------------------------------
# Building a runnable simulation
# ---------------------------------------------------------------------------

def build_simulation(config: ScenarioConfig, seed: object = 0) -> Simulation:
    """Provision every node in the scenario and wire up the proxy links.

    Native nodes are provisioned sequentially from 0x0001 in file order;
    proxy clients (source included) import the provisioner's credential
    bundle and self-assign addresses from the reserved 0x7000+ block.
    Proxy clients attach to their nearest proxy server.
    """
    provisioner = ProvisionerState.create(random.Random(f"{seed}/keys"))
    credentials = export_credentials(provisioner)
    sim = Simulation(
        radio=config.radio_model(), seed=seed, relay_jitter_ms=config.relay_jitter_ms
    )

    imported = 0
    for spec in config.nodes:
        if spec.role in ("proxy_client", "source"):
            state = import_credentials(
                credentials, IMPORTED_RANGE_FIRST + imported, initial_ttl=config.initial_ttl
            )
            state.bearers = set(spec.bearers)
            state.features = set(spec.features)
            imported += 1
        else:
            state = provision_device(
                provisioner, spec.features, spec.bearers, initial_ttl=config.initial_ttl
            )
        is_responder = spec.node_id in config.responders
        if spec.role in ("proxy_client", "source") or is_responder:
            register_emergency_model(state, responder=is_responder)
        sim.add_node(
            spec.node_id,
            state,
            x=spec.x,
            y=spec.y,
            floor=spec.floor,
            responder_processing_ms=(
                config.responder_processing_ms if is_responder else 0.0
            ),
        )

    servers = [n for n in config.nodes if n.role == "proxy_server"]
    for spec in config.nodes:
        if spec.role not in ("proxy_client", "source"):
            continue
        reachable = [
            s for s in servers if abs(s.floor - spec.floor) <= 1
        ] or servers
        nearest = min(reachable, key=lambda s: math.dist((s.x, s.y), (spec.x, spec.y)))
        sim.connect(
            spec.node_id, nearest.node_id, mtu=config.mtu, latency_ms=config.link_latency_ms
        )
    return sim
