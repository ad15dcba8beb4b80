"""Key material and the three identity tiers.

* Tier 1, ``RealId``: opaque real identity held by the owner and the regulator.
* Tier 2, ``BcAdd``: SHA-256 of the public key; the network identifier.
* Tier 3, ``AppId``: HMAC-SHA256 of the BcAdd and an epoch, keyed by the
  owner's private parameters.

A public key is the 32-byte Ed25519 verification key followed by the 32-byte
X25519 agreement key. Both private halves are expanded from one 32-byte
secret, so a whole key pair is reproducible from that secret.

Key secrets form a chain: the root comes from the generation seed and every
rotation hashes the previous secret forward. When a RealId is supplied the
chain is keyed by it (HMAC), which is what lets the regulator replay the chain
from ``(seed, rotation_index)`` and nobody else.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field, replace
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric import ed25519, x25519

from .encoding import Reader, Writer
from .errors import (
    DecodeError,
    MalformedKeyError,
    MalformedProofError,
    RotationTooEarlyError,
    StaleIdentityError,
)

PUBLIC_KEY_LEN = 64
SECRET_LEN = 32
SIGNATURE_LEN = 64
DIGEST_LEN = 32
DEFAULT_SLOT_LENGTH = 1000.0  # simulated seconds

_PROOF_MAGIC = b"DRP1"
_MAX_PROOF_ROTATIONS = 1_000_000


def sha256(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.digest()


@lru_cache(maxsize=4096)
def _signing_key(secret: bytes) -> ed25519.Ed25519PrivateKey:
    return ed25519.Ed25519PrivateKey.from_private_bytes(sha256(b"decentran/ed25519", secret))


@lru_cache(maxsize=4096)
def _agreement_key(secret: bytes) -> x25519.X25519PrivateKey:
    return x25519.X25519PrivateKey.from_private_bytes(sha256(b"decentran/x25519", secret))


def expanded_private_keys(secret: bytes) -> tuple[bytes, bytes]:
    """Raw Ed25519 and X25519 private scalars derived from ``secret``.

    Exposed so privacy scans can look for every byte form of a private key.
    """
    return sha256(b"decentran/ed25519", secret), sha256(b"decentran/x25519", secret)


@lru_cache(maxsize=65536)
def verify_signature(public_key: bytes, signature: bytes, message: bytes) -> bool:
    """Check an Ed25519 signature made by the owner of ``public_key``.

    Results are memoised; the function is pure so this only saves time when
    several replicas check the same transaction.
    """
    if len(public_key) != PUBLIC_KEY_LEN or len(signature) != SIGNATURE_LEN:
        return False
    try:
        ed25519.Ed25519PublicKey.from_public_bytes(public_key[:32]).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes = field(repr=False)

    @classmethod
    def from_secret(cls, secret: bytes) -> "KeyPair":
        if len(secret) != SECRET_LEN:
            raise MalformedKeyError(f"key secret must be {SECRET_LEN} bytes")
        ed_pub = _signing_key(secret).public_key().public_bytes_raw()
        x_pub = _agreement_key(secret).public_key().public_bytes_raw()
        return cls(public_key=ed_pub + x_pub, private_key=secret)

    def sign(self, message: bytes) -> bytes:
        return _signing_key(self.private_key).sign(message)

    def shared_secret(self, peer_public_key: bytes) -> bytes:
        """Raw X25519 shared secret with the holder of ``peer_public_key``."""
        if len(peer_public_key) != PUBLIC_KEY_LEN:
            raise MalformedKeyError("peer public key has wrong length")
        peer = x25519.X25519PublicKey.from_public_bytes(peer_public_key[32:])
        return _agreement_key(self.private_key).exchange(peer)


@dataclass(frozen=True, order=True)
class BcAdd:
    value: bytes

    def hex(self) -> str:
        return self.value.hex()

    def short(self) -> str:
        return self.value[:4].hex()

    def __bytes__(self) -> bytes:
        return self.value

    def __repr__(self) -> str:
        return f"BcAdd({self.short()}…)"


@dataclass(frozen=True)
class RealId:
    value: bytes = field(repr=False)


@dataclass(frozen=True)
class AppId:
    value: bytes
    epoch: int


@dataclass(frozen=True)
class IdentityBundle:
    keypair: KeyPair
    bcadd: BcAdd
    real_id: RealId | None = field(default=None, repr=False)
    app_ids: tuple[AppId, ...] = ()
    bcadd_valid_from: float = 0.0
    bcadd_slot_length: float = DEFAULT_SLOT_LENGTH
    seed: bytes = field(default=b"", repr=False)
    rotation_index: int = 0
    retired: tuple[BcAdd, ...] = ()

    @property
    def public_key(self) -> bytes:
        return self.keypair.public_key

    @property
    def expires_at(self) -> float:
        return self.bcadd_valid_from + self.bcadd_slot_length

    def is_stale(self, now: float) -> bool:
        return now >= self.expires_at

    def regulatory_proof(self) -> bytes:
        """Transcript the regulator replays to link this BcAdd to a RealId."""
        return Writer().raw(_PROOF_MAGIC).blob(self.seed).u32(self.rotation_index).getvalue()

    def with_app_id(self, app_id: AppId) -> "IdentityBundle":
        return replace(self, app_ids=self.app_ids + (app_id,))


def _root_secret(seed: bytes, real_id: RealId | None) -> bytes:
    if real_id is not None:
        return hmac.new(real_id.value, b"decentran/root" + seed, hashlib.sha256).digest()
    return sha256(b"decentran/root", seed)


def _next_secret(secret: bytes, real_id: RealId | None) -> bytes:
    if real_id is not None:
        return hmac.new(real_id.value, b"decentran/rotate" + secret, hashlib.sha256).digest()
    return sha256(b"decentran/rotate", secret)


def derive_bcadd(public_key: bytes) -> BcAdd:
    if len(public_key) != PUBLIC_KEY_LEN:
        raise MalformedKeyError(
            f"public key must be {PUBLIC_KEY_LEN} bytes, got {len(public_key)}"
        )
    return BcAdd(sha256(public_key))


def generate_identity(
    seed: bytes,
    real_id: RealId | None = None,
    *,
    now: float = 0.0,
    slot_length: float = DEFAULT_SLOT_LENGTH,
) -> IdentityBundle:
    if not seed:
        raise ValueError("seed must be non-empty")
    kp = KeyPair.from_secret(_root_secret(seed, real_id))
    return IdentityBundle(
        keypair=kp,
        bcadd=derive_bcadd(kp.public_key),
        real_id=real_id,
        bcadd_valid_from=now,
        bcadd_slot_length=slot_length,
        seed=bytes(seed),
    )


def rotate_bcadd(bundle: IdentityBundle, now: float) -> IdentityBundle:
    """Move to the next key in the chain once the current slot has ended.

    The old BcAdd is kept in ``retired`` for grace-period lookups. App ids are
    bound to the old BcAdd and are dropped.
    """
    if now < bundle.expires_at:
        raise RotationTooEarlyError(
            f"slot ends at {bundle.expires_at:.3f}s, rotation requested at {now:.3f}s"
        )
    kp = KeyPair.from_secret(_next_secret(bundle.keypair.private_key, bundle.real_id))
    return replace(
        bundle,
        keypair=kp,
        bcadd=derive_bcadd(kp.public_key),
        app_ids=(),
        bcadd_valid_from=now,
        rotation_index=bundle.rotation_index + 1,
        retired=bundle.retired + (bundle.bcadd,),
    )


def derive_app_id(
    bundle: IdentityBundle,
    private_params: bytes,
    epoch: int,
    now: float | None = None,
) -> AppId:
    if now is not None and bundle.is_stale(now):
        raise StaleIdentityError("identity slot expired; rotate before deriving app ids")
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    msg = b"decentran/appid" + bundle.bcadd.value + epoch.to_bytes(8, "big")
    return AppId(hmac.new(private_params, msg, hashlib.sha256).digest(), epoch)


def verify_regulatory_derivation(real_id: RealId, bcadd: BcAdd, proof: bytes) -> bool:
    """Regulator-side check that ``bcadd`` descends from ``real_id``."""
    try:
        r = Reader(proof)
        if r.fixed(len(_PROOF_MAGIC)) != _PROOF_MAGIC:
            raise MalformedProofError("bad proof magic")
        seed = r.blob()
        rotations = r.u32()
        r.end()
    except DecodeError as exc:
        raise MalformedProofError(str(exc)) from exc
    if not seed:
        raise MalformedProofError("empty seed in proof")
    if rotations > _MAX_PROOF_ROTATIONS:
        raise MalformedProofError("rotation count out of range")
    secret = _root_secret(seed, real_id)
    for _ in range(rotations):
        secret = _next_secret(secret, real_id)
    candidate = derive_bcadd(KeyPair.from_secret(secret).public_key)
    return hmac.compare_digest(candidate.value, bcadd.value)
