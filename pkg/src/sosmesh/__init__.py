"""sosmesh: emergency messaging over a managed-flooding mesh.

Layers, bottom to top:

- core          addressing, network PDU framing, dedup cache, relay rules
- security      NetKey/AppKey seals, header privacy
- models        access layer: emergency vendor model, generic on/off
- proxy         GATT-style segmentation for bearer-less clients
- provisioning  address allocation and credential bundles
- simnet        deterministic discrete-event radio simulation
- scenario      deployment description files
- harness       experiment campaigns, CSV/plot outputs, calibration
- cli           the `sosmesh` command
"""

from .core import (
    AccessPayload,
    AddressClass,
    BROADCAST_ADDR,
    Bearer,
    Feature,
    MessageCache,
    NetworkPdu,
    NodeState,
    classify_address,
    decode_network_pdu,
    encode_network_pdu,
    next_seq,
    relay_decision,
)
from .errors import MeshError
from .models import (
    EMERGENCY_MODEL,
    EmergencyKind,
    EmergencyMessage,
    decode_emergency,
    encode_emergency,
    publish,
    publish_emergency,
)
from .provisioning import (
    CredentialBundle,
    ProvisionerState,
    export_credentials,
    import_credentials,
    provision_device,
)
from .scenario import ScenarioConfig, build_simulation, load_scenario, parse_scenario
from .security import AppKey, NetKey, derive_privacy_key
from .simnet import RadioModel, Simulation
from .harness import ExperimentPlan, run_campaign, run_experiment

__version__ = "0.1.0"

__all__ = [
    "AccessPayload",
    "AddressClass",
    "AppKey",
    "BROADCAST_ADDR",
    "Bearer",
    "CredentialBundle",
    "EMERGENCY_MODEL",
    "EmergencyKind",
    "EmergencyMessage",
    "ExperimentPlan",
    "Feature",
    "MeshError",
    "MessageCache",
    "NetKey",
    "NetworkPdu",
    "NodeState",
    "ProvisionerState",
    "RadioModel",
    "ScenarioConfig",
    "Simulation",
    "build_simulation",
    "classify_address",
    "decode_emergency",
    "decode_network_pdu",
    "derive_privacy_key",
    "encode_emergency",
    "encode_network_pdu",
    "export_credentials",
    "import_credentials",
    "load_scenario",
    "next_seq",
    "parse_scenario",
    "provision_device",
    "publish",
    "publish_emergency",
    "relay_decision",
    "run_campaign",
    "run_experiment",
]
