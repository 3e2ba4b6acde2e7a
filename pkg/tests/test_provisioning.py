"""Address allocation, credential JSON export/import, joining semantics."""

import json
import random

import pytest

from sosmesh.core import Bearer, Feature, UNICAST_LAST
from sosmesh.errors import AddressSpaceExhausted, InvalidAddress, SchemaViolation
from sosmesh.provisioning import (
    CredentialBundle,
    IMPORTED_RANGE_FIRST,
    ProvisionerState,
    export_credentials,
    import_credentials,
    provision_device,
)
from sosmesh.security import AppKey, NetKey


@pytest.fixture
def provisioner():
    return ProvisionerState.create(random.Random(42))


# ---------------------------------------------------------------------------
# Address allocation
# ---------------------------------------------------------------------------

def test_devices_get_sequential_unicast_addresses(provisioner):
    nodes = [provision_device(provisioner) for _ in range(3)]
    assert [n.unicast for n in nodes] == [0x0001, 0x0002, 0x0003]
    assert set(provisioner.allocated) == {0x0001, 0x0002, 0x0003}


def test_provisioned_device_receives_keys_and_features(provisioner):
    node = provision_device(
        provisioner,
        features=(Feature.RELAY, Feature.PROXY),
        bearers=(Bearer.ADVERTISING, Bearer.GATT),
        initial_ttl=64,
    )
    assert node.features == {Feature.RELAY, Feature.PROXY}
    assert node.bearers == {Bearer.ADVERTISING, Bearer.GATT}
    assert node.initial_ttl == 64
    assert node.net_keys[provisioner.net_key.index] == provisioner.net_key
    for app_key in provisioner.app_keys:
        assert node.app_keys[app_key.index] == app_key


def test_address_space_runs_out_at_the_top(provisioner):
    provisioner.next_unicast = UNICAST_LAST
    last = provision_device(provisioner)
    assert last.unicast == UNICAST_LAST
    with pytest.raises(AddressSpaceExhausted):
        provision_device(provisioner)


def test_distinct_rng_seeds_make_distinct_networks():
    one = ProvisionerState.create(random.Random(1))
    two = ProvisionerState.create(random.Random(2))
    assert one.net_key.material != two.net_key.material
    same = ProvisionerState.create(random.Random(1))
    assert one.net_key.material == same.net_key.material


# ---------------------------------------------------------------------------
# Credential JSON
# ---------------------------------------------------------------------------

def test_export_layout_and_field_order(provisioner):
    text = export_credentials(provisioner)
    assert text.startswith('{"netKey": "')
    document = json.loads(text)
    assert list(document) == ["netKey", "appKeys", "keyIndex"]
    assert document["netKey"] == provisioner.net_key.material.hex()
    assert document["keyIndex"] == provisioner.net_key.index
    assert document["appKeys"] == [k.material.hex() for k in provisioner.app_keys]


def test_export_import_round_trip_is_byte_identical(provisioner):
    text = export_credentials(provisioner)
    assert CredentialBundle.from_json(text).to_json() == text


def test_imported_device_is_gatt_only(provisioner):
    node = import_credentials(export_credentials(provisioner), IMPORTED_RANGE_FIRST)
    assert node.unicast == IMPORTED_RANGE_FIRST
    assert node.bearers == {Bearer.GATT}
    assert node.features == set()
    assert node.net_keys[provisioner.net_key.index].material == provisioner.net_key.material
    assert set(node.app_keys) == {k.index for k in provisioner.app_keys}


def test_import_rejects_non_unicast_address(provisioner):
    text = export_credentials(provisioner)
    for bad in (0x0000, 0x8000, 0xFFFF):
        with pytest.raises(InvalidAddress):
            import_credentials(text, bad)


def test_bundle_rejects_foreign_app_key_binding():
    net = NetKey(bytes(16), index=3)
    alien = AppKey(bytes(16), index=0, bound_net_key=4)
    with pytest.raises(ValueError):
        CredentialBundle(net_key=net, app_keys=(alien,))


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.pop("netKey"),
        lambda d: d.pop("appKeys"),
        lambda d: d.pop("keyIndex"),
        lambda d: d.update(netKey="ab"),                       # wrong length
        lambda d: d.update(netKey="AB" * 16),                  # uppercase hex
        lambda d: d.update(netKey="zz" * 16),                  # not hex at all
        lambda d: d.update(netKey=1234),
        lambda d: d.update(appKeys="feedface"),                # not a list
        lambda d: d.update(appKeys=[42]),
        lambda d: d.update(keyIndex="0"),
        lambda d: d.update(keyIndex=True),                     # bool is not an int here
        lambda d: d.update(keyIndex=4096),
        lambda d: d.update(keyIndex=-1),
    ],
)
def test_import_rejects_schema_violations(provisioner, mutate):
    document = json.loads(export_credentials(provisioner))
    mutate(document)
    with pytest.raises(SchemaViolation):
        CredentialBundle.from_json(json.dumps(document))


def test_import_rejects_garbage_text():
    with pytest.raises(SchemaViolation):
        CredentialBundle.from_json("not json at all {")
    with pytest.raises(SchemaViolation):
        CredentialBundle.from_json('["a", "list"]')


# ---------------------------------------------------------------------------
# Joining an existing network
# ---------------------------------------------------------------------------

def test_imported_phone_can_exchange_sealed_messages(provisioner):
    from sosmesh.models import encode_emergency, publish, unseal_access
    from support import help_request

    native = provision_device(provisioner, features=(Feature.RELAY,))
    from sosmesh.models import register_emergency_model

    register_emergency_model(native)
    phone = import_credentials(export_credentials(provisioner), IMPORTED_RANGE_FIRST)
    register_emergency_model(phone)

    pdu = publish(phone, encode_emergency(help_request(5)), dst=native.unicast)
    assert unseal_access(native, pdu) == encode_emergency(help_request(5))
