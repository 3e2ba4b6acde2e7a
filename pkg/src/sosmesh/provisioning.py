"""Provisioning: address allocation, key installation, credential transfer.

A provisioner owns the subnet's keys and hands out unicast addresses
sequentially starting at 0x0001. Devices that cannot run the full
provisioning procedure (smartphones joining ad hoc, e.g. by scanning a
printed QR code) instead import a credential bundle — a small JSON document
with the network key, the application keys, and the subnet key index — and
pick their own address from a reserved high range.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Set

from .core import (
    Bearer,
    Feature,
    NodeState,
    UNICAST_FIRST,
    UNICAST_LAST,
    is_unicast,
)
from .errors import AddressSpaceExhausted, InvalidAddress, SchemaViolation
from .security import AppKey, KEY_INDEX_MAX, KEY_SIZE, NetKey

# Self-assigned addresses for credential-importing devices live here so they
# can never collide with provisioner-allocated ones.
IMPORTED_RANGE_FIRST = 0x7000

CREDENTIAL_FILE_SUFFIX = ".creds.json"


# ---------------------------------------------------------------------------
# Credential bundle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CredentialBundle:
    """Everything a joining device needs: netKey, appKeys, keyIndex."""

    net_key: NetKey
    app_keys: tuple

    def __post_init__(self) -> None:
        for app_key in self.app_keys:
            if app_key.bound_net_key != self.net_key.index:
                raise ValueError(
                    f"app key bound to subnet {app_key.bound_net_key},"
                    f" bundle subnet is {self.net_key.index}"
                )

    def to_json(self) -> str:
        """Serialize with a fixed field order; equal bundles give equal bytes."""
        document = {
            "netKey": self.net_key.material.hex(),
            "appKeys": [k.material.hex() for k in self.app_keys],
            "keyIndex": self.net_key.index,
        }
        return json.dumps(document, separators=(", ", ": "))

    @classmethod
    def from_json(cls, text: str) -> "CredentialBundle":
        try:
            document = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"credential JSON does not parse: {exc}") from exc
        if not isinstance(document, dict):
            raise SchemaViolation("credential document must be a JSON object")
        for name in ("netKey", "appKeys", "keyIndex"):
            if name not in document:
                raise SchemaViolation(f"missing required field {name!r}")

        key_index = document["keyIndex"]
        if not isinstance(key_index, int) or isinstance(key_index, bool):
            raise SchemaViolation("keyIndex must be an integer")
        if not 0 <= key_index <= KEY_INDEX_MAX:
            raise SchemaViolation(f"keyIndex {key_index} outside 0..{KEY_INDEX_MAX}")

        net_material = _parse_key_hex(document["netKey"], "netKey")
        if not isinstance(document["appKeys"], list):
            raise SchemaViolation("appKeys must be a list")
        app_keys = []
        for position, entry in enumerate(document["appKeys"]):
            material = _parse_key_hex(entry, f"appKeys[{position}]")
            app_keys.append(AppKey(material, index=position, bound_net_key=key_index))
        return cls(net_key=NetKey(net_material, index=key_index), app_keys=tuple(app_keys))


def _parse_key_hex(value: object, label: str) -> bytes:
    if not isinstance(value, str):
        raise SchemaViolation(f"{label} must be a hex string")
    if len(value) != KEY_SIZE * 2 or value != value.lower():
        raise SchemaViolation(f"{label} must be {KEY_SIZE * 2} lowercase hex characters")
    try:
        return bytes.fromhex(value)
    except ValueError as exc:
        raise SchemaViolation(f"{label} is not valid hex") from exc


# ---------------------------------------------------------------------------
# Provisioner
# ---------------------------------------------------------------------------

@dataclass
class ProvisionerState:
    """Key authority plus the address allocation cursor."""

    net_key: NetKey
    app_keys: List[AppKey] = field(default_factory=list)
    next_unicast: int = UNICAST_FIRST
    allocated: Set[int] = field(default_factory=set)

    @classmethod
    def create(
        cls, rng: Optional[random.Random] = None, key_index: int = 0, app_key_count: int = 1
    ) -> "ProvisionerState":
        """Generate fresh key material (deterministically when given an rng)."""
        rng = rng or random.SystemRandom()
        net_key = NetKey(rng.randbytes(KEY_SIZE), index=key_index)
        app_keys = [
            AppKey(rng.randbytes(KEY_SIZE), index=i, bound_net_key=key_index)
            for i in range(app_key_count)
        ]
        return cls(net_key=net_key, app_keys=app_keys)

    def bundle(self) -> CredentialBundle:
        return CredentialBundle(net_key=self.net_key, app_keys=tuple(self.app_keys))


def provision_device(
    provisioner: ProvisionerState,
    features: Iterable[Feature] = (),
    bearers: Iterable[Bearer] = (Bearer.ADVERTISING,),
    initial_ttl: Optional[int] = None,
) -> NodeState:
    """Allocate the next unicast address and install the subnet's keys."""
    if provisioner.next_unicast > UNICAST_LAST:
        raise AddressSpaceExhausted(
            f"all {UNICAST_LAST} unicast addresses are allocated"
        )
    address = provisioner.next_unicast
    provisioner.next_unicast = address + 1
    provisioner.allocated.add(address)

    node = NodeState(unicast=address, features=set(features), bearers=set(bearers))
    if initial_ttl is not None:
        node.initial_ttl = initial_ttl
    node.net_keys[provisioner.net_key.index] = provisioner.net_key
    for app_key in provisioner.app_keys:
        node.app_keys[app_key.index] = app_key
    return node


def export_credentials(provisioner: ProvisionerState) -> str:
    """The JSON text a QR code would carry. Byte-identical across calls."""
    return provisioner.bundle().to_json()


def import_credentials(
    text: str, self_address: int, initial_ttl: Optional[int] = None
) -> NodeState:
    """Join from a credential bundle: the smartphone profile.

    The resulting node speaks only over the GATT bearer and has no relay or
    proxy capability; `self_address` must be a unicast address, conventionally
    taken from the reserved 0x7000+ block.
    """
    bundle = CredentialBundle.from_json(text)
    if not is_unicast(self_address):
        raise InvalidAddress(f"{self_address:#06x} is not a unicast address")
    node = NodeState(unicast=self_address, features=set(), bearers={Bearer.GATT})
    if initial_ttl is not None:
        node.initial_ttl = initial_ttl
    node.net_keys[bundle.net_key.index] = bundle.net_key
    for app_key in bundle.app_keys:
        node.app_keys[app_key.index] = app_key
    return node
