"""Exception types shared across the stack.

Every error raised by the package derives from MeshError so callers can
catch the whole family with one clause.
"""


class MeshError(Exception):
    """Base class for all sosmesh errors."""


# ---------------------------------------------------------------- network core

class MalformedPdu(MeshError):
    """A byte string could not be parsed as a network PDU."""


class OversizedPayload(MeshError):
    """A payload or PDU would exceed the wire size limits."""


class SequenceExhausted(MeshError):
    """A node's 24-bit sequence counter has no values left."""


# ------------------------------------------------------------------- security

class AuthenticationFailure(MeshError):
    """An authenticated-decryption check failed (wrong key, tamper, nonce)."""


class MissingKey(MeshError):
    """A referenced key index is not installed on this node."""


# --------------------------------------------------------------- access layer

class UnknownOpcode(MeshError):
    """Access payload carries an opcode outside the model's opcode space."""


class MalformedMessage(MeshError):
    """Access payload has a known opcode but inconsistent contents."""


# ---------------------------------------------------------------------- proxy

class InvalidMtu(MeshError):
    """Link MTU too small to carry a segment header plus one payload byte."""


class ProtocolViolation(MeshError):
    """Segment sequence violated the reassembly state machine."""


class NoActiveLink(MeshError):
    """An operation required a connected proxy link and none exists."""


# --------------------------------------------------------------- provisioning

class AddressSpaceExhausted(MeshError):
    """No unicast addresses left to allocate."""


class SchemaViolation(MeshError):
    """Credential JSON does not match the expected schema."""


class InvalidAddress(MeshError):
    """An address is outside the range valid for its role."""


# ------------------------------------------------------------------- scenario

class ParseError(MeshError):
    """Scenario file is syntactically invalid."""


class ValidationError(MeshError):
    """Scenario file parsed but its contents are inconsistent."""


# -------------------------------------------------------------------- harness

class InvalidTtlPair(MeshError):
    """Received TTL is larger than the initial TTL it is compared against."""
