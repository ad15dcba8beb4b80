"""Public-key-as-identity mutual authentication.

A three-message sigma-style exchange between any two registered entities:

    I -> R  Hello      bcadd_I, pk_I, nonce_I, add_I
    R -> I  Challenge  bcadd_R, pk_R, nonce_R, add_R, echo(nonce_I), sig_R
    I -> R  Response   echo(nonce_R), sig_I

Each signature covers both nonces, both addresses and both BcAdds, so a relay
that rewrites any field breaks a signature or a hash binding on at least one
side. The session key is HKDF over the X25519 secret of the two public keys,
salted with both nonces.
"""

from __future__ import annotations

import enum
import secrets
from dataclasses import dataclass, field
from typing import Callable, Protocol

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .encoding import Reader, Writer
from .errors import (
    BcaddMismatchError,
    DecodeError,
    HandshakeError,
    InvalidStateError,
    NonceMismatchError,
    SignatureInvalidError,
    StaleIdentityError,
    UnregisteredIdentityError,
)
from .identity import (
    DIGEST_LEN,
    PUBLIC_KEY_LEN,
    BcAdd,
    IdentityBundle,
    derive_bcadd,
    verify_signature,
)

NONCE_LEN = 16
SESSION_KEY_LEN = 32

_CHALLENGE_CTX = b"decentran/pkaai/challenge"
_RESPONSE_CTX = b"decentran/pkaai/response"
_SESSION_CTX = b"decentran/pkaai/session"


class RegistryView(Protocol):
    def is_registered(self, bcadd: BcAdd) -> bool: ...


class HandshakeState(enum.Enum):
    INIT = "init"
    HELLO_SENT = "hello-sent"
    CHALLENGED = "challenged"
    VERIFIED = "verified"
    FAILED = "failed"


class _Tag(enum.IntEnum):
    HELLO = 0x41
    CHALLENGE = 0x42
    RESPONSE = 0x43


@dataclass(frozen=True)
class Hello:
    bcadd: BcAdd
    public_key: bytes
    nonce: bytes
    add: str

    def encode(self) -> bytes:
        return (Writer().u8(_Tag.HELLO).raw(self.bcadd.value).blob(self.public_key)
                .blob(self.nonce).text(self.add).getvalue())

    @classmethod
    def decode(cls, data: bytes) -> "Hello":
        r = Reader(data)
        _expect_tag(r, _Tag.HELLO)
        msg = cls(BcAdd(r.fixed(DIGEST_LEN)), r.blob(), r.blob(), r.text())
        r.end()
        return msg


@dataclass(frozen=True)
class Challenge:
    bcadd: BcAdd
    public_key: bytes
    nonce: bytes
    add: str
    echo_nonce: bytes
    signature: bytes

    def encode(self) -> bytes:
        return (Writer().u8(_Tag.CHALLENGE).raw(self.bcadd.value).blob(self.public_key)
                .blob(self.nonce).text(self.add).blob(self.echo_nonce)
                .blob(self.signature).getvalue())

    @classmethod
    def decode(cls, data: bytes) -> "Challenge":
        r = Reader(data)
        _expect_tag(r, _Tag.CHALLENGE)
        msg = cls(BcAdd(r.fixed(DIGEST_LEN)), r.blob(), r.blob(), r.text(), r.blob(), r.blob())
        r.end()
        return msg


@dataclass(frozen=True)
class Response:
    echo_nonce: bytes
    signature: bytes

    def encode(self) -> bytes:
        return Writer().u8(_Tag.RESPONSE).blob(self.echo_nonce).blob(self.signature).getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "Response":
        r = Reader(data)
        _expect_tag(r, _Tag.RESPONSE)
        msg = cls(r.blob(), r.blob())
        r.end()
        return msg


def _expect_tag(r: Reader, tag: _Tag) -> None:
    if r.u8() != tag:
        raise DecodeError(f"expected {tag.name.lower()} message")


@dataclass(eq=False)
class HandshakeSession:
    local: IdentityBundle = field(repr=False)
    peer_bcadd: BcAdd | None
    local_add: str
    initiator: bool
    registry: RegistryView | None = field(default=None, repr=False)
    local_nonce: bytes = b""
    peer_nonce: bytes = b""
    peer_add: str | None = None
    peer_public_key: bytes = b""
    state: HandshakeState = HandshakeState.INIT
    session_key: bytes = field(default=b"", repr=False)
    failure: str | None = None

    @property
    def verified(self) -> bool:
        return self.state is HandshakeState.VERIFIED

    def _fail(self, exc: HandshakeError) -> HandshakeError:
        self.state = HandshakeState.FAILED
        self.session_key = b""
        self.failure = exc.reason
        return exc

    def _initiator_bcadd(self) -> BcAdd:
        return self.local.bcadd if self.initiator else self.peer_bcadd

    def _responder_bcadd(self) -> BcAdd:
        return self.peer_bcadd if self.initiator else self.local.bcadd


def _transcript(ctx: bytes, nonce_i: bytes, nonce_r: bytes, add_i: str, add_r: str,
                bcadd_i: BcAdd, bcadd_r: BcAdd) -> bytes:
    return (Writer().raw(ctx).blob(nonce_i).blob(nonce_r).text(add_i).text(add_r)
            .raw(bcadd_i.value).raw(bcadd_r.value).getvalue())


def _session_key(session: HandshakeSession) -> bytes:
    shared = session.local.keypair.shared_secret(session.peer_public_key)
    if session.initiator:
        nonce_i, nonce_r = session.local_nonce, session.peer_nonce
    else:
        nonce_i, nonce_r = session.peer_nonce, session.local_nonce
    info = _SESSION_CTX + session._initiator_bcadd().value + session._responder_bcadd().value
    return HKDF(
        algorithm=hashes.SHA256(), length=SESSION_KEY_LEN, salt=nonce_i + nonce_r, info=info
    ).derive(shared)


def _check_peer_key(bcadd: BcAdd, public_key: bytes) -> None:
    if len(public_key) != PUBLIC_KEY_LEN or derive_bcadd(public_key) != bcadd:
        raise BcaddMismatchError("public key does not hash to the claimed bcadd")


def _fresh_nonce(rng) -> bytes:
    if rng is None:
        return secrets.token_bytes(NONCE_LEN)
    return rng.randbytes(NONCE_LEN)


def handshake_initiate(
    local: IdentityBundle,
    peer_bcadd: BcAdd,
    local_add: str,
    registry: RegistryView | None = None,
    *,
    now: float = 0.0,
    rng=None,
) -> tuple[HandshakeSession, Hello]:
    """Start a handshake towards ``peer_bcadd``.

    ``registry`` is the initiator's ledger view; when given, the responder's
    BcAdd must be registered there before the session can verify.
    """
    if local.is_stale(now):
        raise StaleIdentityError("identity slot expired; rotate before authenticating")
    session = HandshakeSession(local, peer_bcadd, local_add, True, registry)
    session.local_nonce = _fresh_nonce(rng)
    session.state = HandshakeState.HELLO_SENT
    return session, Hello(local.bcadd, local.public_key, session.local_nonce, local_add)


def handshake_respond(
    local: IdentityBundle,
    hello: Hello,
    registry: RegistryView,
    *,
    local_add: str,
    now: float = 0.0,
    rng=None,
) -> tuple[HandshakeSession, Challenge]:
    """Check a hello against the ledger view and answer with a signed challenge.

    Raises the matching ``HandshakeError``; the failed session is attached to
    the exception as ``session``.
    """
    session = HandshakeSession(local, hello.bcadd, local_add, False, registry)
    try:
        if local.is_stale(now):
            raise StaleIdentityError("identity slot expired; rotate before authenticating")
        _check_peer_key(hello.bcadd, hello.public_key)
        if not registry.is_registered(hello.bcadd):
            raise UnregisteredIdentityError(f"{hello.bcadd!r} is not in the ledger")
        if len(hello.nonce) != NONCE_LEN:
            raise NonceMismatchError("initiator nonce has the wrong length")
    except HandshakeError as exc:
        exc.session = session
        raise session._fail(exc)
    session.peer_public_key = hello.public_key
    session.peer_nonce = hello.nonce
    session.peer_add = hello.add
    session.local_nonce = _fresh_nonce(rng)
    sig = local.keypair.sign(_transcript(
        _CHALLENGE_CTX, hello.nonce, session.local_nonce, hello.add, local_add,
        hello.bcadd, local.bcadd,
    ))
    session.state = HandshakeState.CHALLENGED
    challenge = Challenge(
        local.bcadd, local.public_key, session.local_nonce, local_add, hello.nonce, sig
    )
    return session, challenge


def handshake_finalize(
    session: HandshakeSession, message: Challenge | Response
) -> tuple[HandshakeSession, Response | None]:
    """Verify the peer's signed message and derive the session key.

    The initiator passes the challenge and gets back the response to send;
    the responder passes the response and gets ``None``.
    """
    try:
        if session.initiator:
            if session.state is not HandshakeState.HELLO_SENT or not isinstance(message, Challenge):
                raise InvalidStateError(f"initiator cannot accept a challenge in {session.state.value}")
            return session, _finalize_initiator(session, message)
        if session.state is not HandshakeState.CHALLENGED or not isinstance(message, Response):
            raise InvalidStateError(f"responder cannot accept a response in {session.state.value}")
        _finalize_responder(session, message)
        return session, None
    except HandshakeError as exc:
        if not isinstance(exc, InvalidStateError):
            session._fail(exc)
        raise


def _finalize_initiator(session: HandshakeSession, ch: Challenge) -> Response:
    if session.peer_bcadd is not None and ch.bcadd != session.peer_bcadd:
        raise BcaddMismatchError("challenge comes from an unexpected bcadd")
    _check_peer_key(ch.bcadd, ch.public_key)
    if ch.echo_nonce != session.local_nonce:
        raise NonceMismatchError("challenge does not echo our nonce")
    if len(ch.nonce) != NONCE_LEN:
        raise NonceMismatchError("responder nonce has the wrong length")
    if session.registry is not None and not session.registry.is_registered(ch.bcadd):
        raise UnregisteredIdentityError(f"{ch.bcadd!r} is not in the ledger")
    signed = _transcript(
        _CHALLENGE_CTX, session.local_nonce, ch.nonce, session.local_add, ch.add,
        session.local.bcadd, ch.bcadd,
    )
    if not verify_signature(ch.public_key, ch.signature, signed):
        raise SignatureInvalidError("challenge signature does not verify")
    session.peer_bcadd = ch.bcadd
    session.peer_public_key = ch.public_key
    session.peer_nonce = ch.nonce
    session.peer_add = ch.add
    sig = session.local.keypair.sign(_transcript(
        _RESPONSE_CTX, session.local_nonce, ch.nonce, session.local_add, ch.add,
        session.local.bcadd, ch.bcadd,
    ))
    session.session_key = _session_key(session)
    session.state = HandshakeState.VERIFIED
    return Response(ch.nonce, sig)


def _finalize_responder(session: HandshakeSession, resp: Response) -> None:
    if resp.echo_nonce != session.local_nonce:
        raise NonceMismatchError("response does not echo our nonce")
    signed = _transcript(
        _RESPONSE_CTX, session.peer_nonce, session.local_nonce, session.peer_add,
        session.local_add, session.peer_bcadd, session.local.bcadd,
    )
    if not verify_signature(session.peer_public_key, resp.signature, signed):
        raise SignatureInvalidError("response signature does not verify")
    session.session_key = _session_key(session)
    session.state = HandshakeState.VERIFIED


def run_handshake(
    initiator: IdentityBundle,
    responder: IdentityBundle,
    registry: RegistryView,
    *,
    initiator_add: str = "ue",
    responder_add: str = "gnb",
    responder_registry: RegistryView | None = None,
    rng=None,
    now: float = 0.0,
    tamper: Callable[[str, object], object] | None = None,
) -> tuple[HandshakeSession, HandshakeSession]:
    """Drive a complete in-memory exchange.

    ``tamper(stage, message)`` may rewrite each message in transit, which is
    how relay adversaries are modelled. Failures are recorded on the sessions
    rather than raised.
    """
    relay = tamper or (lambda _stage, m: m)
    i_sess, hello = handshake_initiate(
        initiator, responder.bcadd, initiator_add, registry, now=now, rng=rng
    )
    hello = relay("hello", hello)
    try:
        r_sess, challenge = handshake_respond(
            responder, hello, responder_registry or registry,
            local_add=responder_add, now=now, rng=rng,
        )
    except HandshakeError as exc:
        return i_sess, exc.session
    challenge = relay("challenge", challenge)
    try:
        _, response = handshake_finalize(i_sess, challenge)
    except HandshakeError:
        return i_sess, r_sess
    response = relay("response", response)
    try:
        handshake_finalize(r_sess, response)
    except HandshakeError:
        pass
    return i_sess, r_sess


# -- payload protection --------------------------------------------------------

def _aead_nonce(seq: int) -> bytes:
    return seq.to_bytes(12, "big")


def _aad(src: BcAdd, dst: BcAdd, seq: int) -> bytes:
    return src.value + dst.value + seq.to_bytes(8, "big")


def seal_payload(session_key: bytes, src: BcAdd, dst: BcAdd, seq: int, plaintext: bytes) -> bytes:
    """Encrypt and authenticate a payload for the peer holding ``session_key``.

    ``seq`` must never repeat under one key; it doubles as the AEAD nonce.
    """
    return ChaCha20Poly1305(session_key).encrypt(_aead_nonce(seq), plaintext, _aad(src, dst, seq))


def open_payload(session_key: bytes, src: BcAdd, dst: BcAdd, seq: int, ciphertext: bytes) -> bytes:
    return ChaCha20Poly1305(session_key).decrypt(_aead_nonce(seq), ciphertext, _aad(src, dst, seq))


# -- over the simulated network ----------------------------------------------

class HandshakeAgent:
    """Runs handshakes for one entity over a ``SimNetwork`` address.

    Inbound hellos are answered automatically. ``connect`` starts an outbound
    handshake and calls ``on_done(session)`` once it verifies or fails.
    """

    def __init__(self, sim, net, addr: str, bundle: IdentityBundle, registry: RegistryView):
        self.sim = sim
        self.net = net
        self.addr = addr
        self.bundle = bundle
        self.registry = registry
        self._rng = sim.rng(f"auth/{addr}")
        self._outbound: dict[str, tuple[HandshakeSession, Callable | None]] = {}
        self._inbound: dict[str, HandshakeSession] = {}
        self.sessions: dict[str, HandshakeSession] = {}
        self.failures: list[tuple[str, str]] = []
        self.on_inbound: Callable[[str, HandshakeSession], None] | None = None
        net.register(addr, self._on_hello, Hello)
        net.register(addr, self._on_challenge, Challenge)
        net.register(addr, self._on_response, Response)

    def connect(self, peer_addr: str, peer_bcadd: BcAdd, on_done=None) -> HandshakeSession:
        session, hello = handshake_initiate(
            self.bundle, peer_bcadd, self.addr, self.registry, now=self.sim.now, rng=self._rng
        )
        self._outbound[peer_addr] = (session, on_done)
        self.net.send(self.addr, peer_addr, hello)
        return session

    def _done(self, peer: str, session: HandshakeSession, cb) -> None:
        if session.verified:
            self.sessions[peer] = session
        else:
            self.failures.append((peer, session.failure or "failed"))
        self.sim.record(self.addr, "handshake", f"{peer} {session.state.value}")
        if cb is not None:
            cb(session)

    def _on_hello(self, src: str, hello: Hello) -> None:
        try:
            session, challenge = handshake_respond(
                self.bundle, hello, self.registry, local_add=self.addr, now=self.sim.now, rng=self._rng
            )
        except HandshakeError as exc:
            self._done(src, exc.session, None)
            return
        self._inbound[src] = session
        self.net.send(self.addr, src, challenge)

    def _on_challenge(self, src: str, challenge: Challenge) -> None:
        pending = self._outbound.pop(src, None)
        if pending is None:
            return
        session, cb = pending
        try:
            _, response = handshake_finalize(session, challenge)
        except HandshakeError:
            self._done(src, session, cb)
            return
        self.net.send(self.addr, src, response)
        self._done(src, session, cb)

    def _on_response(self, src: str, response: Response) -> None:
        session = self._inbound.pop(src, None)
        if session is None:
            return
        try:
            handshake_finalize(session, response)
        except HandshakeError:
            pass
        self._done(src, session, None)
        if session.verified and self.on_inbound is not None:
            self.on_inbound(src, session)
