"""Exception hierarchy shared by every subsystem."""


class DecentranError(Exception):
    """Base class for all library errors."""


class DecodeError(DecentranError, ValueError):
    """Bytes do not form a valid canonical encoding."""


# identity

class MalformedKeyError(DecentranError, ValueError):
    pass


class RotationTooEarlyError(DecentranError):
    pass


class StaleIdentityError(DecentranError):
    pass


class MalformedProofError(DecentranError, ValueError):
    pass


# ledger / consensus

class ChainBreakError(DecentranError):
    pass


class BackpressureError(DecentranError):
    pass


class UnknownNodeError(DecentranError, KeyError):
    pass


# authentication

class HandshakeError(DecentranError):
    """A handshake step failed; ``reason`` is a stable machine-readable tag."""

    reason = "handshake-failed"

    def __init__(self, message=""):
        super().__init__(message or self.reason)


class BcaddMismatchError(HandshakeError):
    reason = "bcadd-mismatch"


class UnregisteredIdentityError(HandshakeError):
    reason = "unregistered-identity"


class SignatureInvalidError(HandshakeError):
    reason = "signature-invalid"


class NonceMismatchError(HandshakeError):
    reason = "nonce-mismatch"


class InvalidStateError(HandshakeError):
    reason = "invalid-state"


# mobility / tiers / controller

class NotFoundError(DecentranError, KeyError):
    pass


class UnauthenticatedAttachError(DecentranError):
    pass


class CommitTimeoutError(DecentranError):
    pass


class SequenceConflictError(DecentranError):
    pass


class UnsupportedTierError(DecentranError):
    pass


class RelayUnreachableError(DecentranError):
    pass


class AddressPoolExhaustedError(DecentranError):
    pass


class DestinationUnknownError(DecentranError):
    pass


class ConfigError(DecentranError, ValueError):
    """Scenario configuration is invalid.

    ``field`` is the dotted ``section.key`` path and ``line`` the 1-based line
    in the source file when it could be located.
    """

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(field)
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class ScenarioError(DecentranError):
    """A scenario ran but could not complete one of its phases."""
