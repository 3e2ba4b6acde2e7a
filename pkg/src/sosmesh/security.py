"""Two-layer message security: network seal, application seal, header privacy.

The network layer seals (encrypts + authenticates) every PDU under the shared
NetKey so that only provisioned nodes can read or forge traffic.  The
application payload inside is sealed a second time under an AppKey, so pure
infrastructure nodes (relays that only hold the NetKey) can forward traffic
without being able to read it.  Seal order is onion style: application inner,
network outer.

Headers are never sent in the clear either: a PrivacyKey derived from the
NetKey drives an XOR keystream over the header bytes, keyed by a prefix of the
ciphertext so every PDU gets a fresh mask.

Primitives: AES-CCM with 4-byte tags for authenticated encryption and
HMAC-SHA256 as the keyed PRF.  Tags are deliberately short — the wire budget
is 29 bytes — which is why both layers must hold for a payload to be accepted.
"""

from __future__ import annotations

import hmac as _hmac
import hashlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Tuple

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESCCM

from .errors import AuthenticationFailure

KEY_SIZE = 16          # bytes of key material
TAG_SIZE = 4           # truncated AEAD tag, both layers
NONCE_SIZE = 13        # AES-CCM maximum
KEY_INDEX_MAX = 0xFFF  # key indexes are 12-bit
KEYSTREAM_SEED_LEN = 8  # ciphertext prefix feeding the obfuscation keystream

_PRIVACY_LABEL = b"header-privacy"

# Optional observer invoked with (key_material, nonce) on every seal; test
# builds install one to assert nonce uniqueness per key within a run.
_nonce_observer: Optional[Callable[[bytes, bytes], None]] = None


def set_nonce_observer(observer: Optional[Callable[[bytes, bytes], None]]) -> None:
    global _nonce_observer
    _nonce_observer = observer


# ---------------------------------------------------------------------------
# Key material
# ---------------------------------------------------------------------------

def _check_key(material: bytes, index: int) -> None:
    if len(material) != KEY_SIZE:
        raise ValueError(f"key material must be {KEY_SIZE} bytes, got {len(material)}")
    if not 0 <= index <= KEY_INDEX_MAX:
        raise ValueError(f"key index {index} outside 0..{KEY_INDEX_MAX}")


@dataclass(frozen=True)
class NetKey:
    """Subnet-wide key; possession defines network membership."""

    material: bytes
    index: int = 0

    def __post_init__(self) -> None:
        _check_key(self.material, self.index)


@dataclass(frozen=True)
class AppKey:
    """Application key bound to one NetKey; gates payload readability."""

    material: bytes
    index: int = 0
    bound_net_key: int = 0

    def __post_init__(self) -> None:
        _check_key(self.material, self.index)
        if not 0 <= self.bound_net_key <= KEY_INDEX_MAX:
            raise ValueError(f"bound net key index {self.bound_net_key} outside 0..{KEY_INDEX_MAX}")


@dataclass(frozen=True)
class PrivacyKey:
    """Header-obfuscation key, always derived from a NetKey."""

    material: bytes

    def __post_init__(self) -> None:
        if len(self.material) != KEY_SIZE:
            raise ValueError(f"privacy key must be {KEY_SIZE} bytes")


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def prf(key: bytes, data: bytes) -> bytes:
    """Keyed PRF (HMAC-SHA256). 32-byte output."""
    return _hmac.new(key, data, hashlib.sha256).digest()


@lru_cache(maxsize=256)
def _aead(key_material: bytes) -> AESCCM:
    return AESCCM(key_material, tag_length=TAG_SIZE)


def message_nonce(src: int, seq: int) -> bytes:
    """Per-message nonce: src(2) || seq(3) big-endian, zero padded to 13 bytes.

    Unique per key as long as each source keeps its sequence counter strictly
    increasing, which next_seq() enforces.
    """
    return src.to_bytes(2, "big") + seq.to_bytes(3, "big") + bytes(8)


def _seal(key_material: bytes, plaintext: bytes, aad: bytes, nonce: bytes) -> Tuple[bytes, bytes]:
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
    if _nonce_observer is not None:
        _nonce_observer(key_material, nonce)
    sealed = _aead(key_material).encrypt(nonce, plaintext, aad)
    return sealed[:-TAG_SIZE], sealed[-TAG_SIZE:]


def _open(key_material: bytes, ciphertext: bytes, tag: bytes, aad: bytes, nonce: bytes) -> bytes:
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
    try:
        return _aead(key_material).decrypt(nonce, ciphertext + tag, aad)
    except InvalidTag as exc:
        raise AuthenticationFailure("authenticated decryption failed") from exc


# ---------------------------------------------------------------------------
# Network layer
# ---------------------------------------------------------------------------

def seal_network(key: NetKey, header: bytes, plaintext: bytes, nonce: bytes) -> Tuple[bytes, bytes]:
    """Encrypt and authenticate a network payload, binding `header` as AAD."""
    return _seal(key.material, plaintext, header, nonce)


def open_network(key: NetKey, header: bytes, ciphertext: bytes, tag: bytes, nonce: bytes) -> bytes:
    """Inverse of seal_network; raises AuthenticationFailure on any mismatch."""
    return _open(key.material, ciphertext, tag, header, nonce)


# ---------------------------------------------------------------------------
# Application layer
# ---------------------------------------------------------------------------

def seal_application(key: AppKey, payload: bytes, nonce: bytes) -> Tuple[bytes, bytes]:
    """Encrypt and authenticate an access payload under an AppKey."""
    return _seal(key.material, payload, b"", nonce)


def open_application(key: AppKey, ciphertext: bytes, tag: bytes, nonce: bytes) -> bytes:
    """Inverse of seal_application; raises AuthenticationFailure on mismatch."""
    return _open(key.material, ciphertext, tag, b"", nonce)


# ---------------------------------------------------------------------------
# Header privacy
# ---------------------------------------------------------------------------

def derive_privacy_key(key: NetKey) -> PrivacyKey:
    """Deterministically derive the header-obfuscation key from a NetKey."""
    return PrivacyKey(prf(key.material, _PRIVACY_LABEL)[:KEY_SIZE])


def keystream_seed(ciphertext: bytes, tag: bytes) -> bytes:
    """First 8 bytes of ciphertext||tag, zero padded; feeds the header mask."""
    return (ciphertext + tag)[:KEYSTREAM_SEED_LEN].ljust(KEYSTREAM_SEED_LEN, b"\x00")


def obfuscate_header(key: PrivacyKey, header: bytes, seed: bytes) -> bytes:
    """XOR the header with PRF(privacy key, seed).

    The mask depends on the sealed payload bytes, so equal headers under the
    same key still obfuscate differently for different messages.  (A PDU whose
    ciphertext prefix maps to a zero keystream would pass through unchanged;
    with a PRF this is a 2^-72 event per message and is accepted.)
    """
    mask = prf(key.material, seed)[: len(header)]
    return bytes(h ^ m for h, m in zip(header, mask))


def deobfuscate_header(key: PrivacyKey, header: bytes, seed: bytes) -> bytes:
    """XOR is an involution; deobfuscation is the same transform."""
    return obfuscate_header(key, header, seed)
