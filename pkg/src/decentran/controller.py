"""Network/LAN controller: BcAdd to legacy address translation and opaque forwarding.

The controller never holds session keys. It routes a packet by its
destination BcAdd, first through the mobility registry (to the serving gNB)
and then through its legacy address bindings (out of the LAN port). The
ciphertext is passed through untouched.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from pathlib import Path

from .encoding import Reader, Writer
from .errors import (
    AddressPoolExhaustedError,
    DestinationUnknownError,
    NotFoundError,
    UnregisteredIdentityError,
)
from .identity import DIGEST_LEN, BcAdd

DEFAULT_POOL = "10.60.0.0/24"
DEFAULT_GATEWAY = "10.60.255.254"
DEFAULT_LEASE = 10_000.0


@dataclass(frozen=True)
class AddressBinding:
    bcadd: BcAdd
    legacy_addr: str
    lease_expiry: float


@dataclass(frozen=True)
class DataPacket:
    src_bcadd: BcAdd
    dst_bcadd: BcAdd
    ciphertext: bytes
    seq: int

    def encode(self) -> bytes:
        return (Writer().u8(0x50).raw(self.src_bcadd.value).raw(self.dst_bcadd.value)
                .u64(self.seq).blob(self.ciphertext).getvalue())

    @classmethod
    def decode(cls, data: bytes) -> "DataPacket":
        r = Reader(data)
        r.u8()
        src, dst = BcAdd(r.fixed(DIGEST_LEN)), BcAdd(r.fixed(DIGEST_LEN))
        seq = r.u64()
        pkt = cls(src, dst, r.blob(), seq)
        r.end()
        return pkt


@dataclass(frozen=True)
class LegacyFrame:
    """A packet leaving through the LAN port with legacy addresses in its header."""

    src_addr: str
    dst_addr: str
    seq: int
    payload: bytes
    time: float

    def encode(self) -> bytes:
        return (Writer().text(self.src_addr).text(self.dst_addr).u64(self.seq)
                .blob(self.payload).time(self.time).getvalue())

    @classmethod
    def read(cls, r: Reader) -> "LegacyFrame":
        return cls(r.text(), r.text(), r.u64(), r.blob(), r.time())


def read_egress_trace(path: str | Path) -> list[LegacyFrame]:
    r = Reader(Path(path).read_bytes())
    frames = [LegacyFrame.read(r) for _ in range(r.u32())]
    r.end()
    return frames


@dataclass(frozen=True)
class Delivery:
    kind: str  # "gnb" or "legacy"
    target: str
    packet: DataPacket


class NetController:
    def __init__(
        self,
        sim,
        *,
        pool: str = DEFAULT_POOL,
        gateway: str = DEFAULT_GATEWAY,
        lease: float = DEFAULT_LEASE,
        net=None,
        node_id: str = "controller",
        view=None,
    ):
        self.sim = sim
        self.pool = ipaddress.ip_network(pool)
        self.gateway = gateway
        self.lease = lease
        self.net = net
        self.node_id = node_id
        self.view = view
        self._by_bcadd: dict[BcAdd, AddressBinding] = {}
        self._by_addr: dict[str, AddressBinding] = {}
        self.egress: list[LegacyFrame] = []
        self.forwarded = 0
        # the controller has no decryption path; this stays at zero by construction
        self.decryptions = 0

    # -- address bindings ----------------------------------------------------

    def _expire(self) -> None:
        now = self.sim.now
        for b in [b for b in self._by_bcadd.values() if b.lease_expiry <= now]:
            self.unbind(b.bcadd)

    def bind(self, bcadd: BcAdd, snapshot) -> AddressBinding:
        if not snapshot.is_registered(bcadd):
            raise UnregisteredIdentityError(f"{bcadd!r} is not in the ledger")
        self._expire()
        current = self._by_bcadd.get(bcadd)
        if current is not None:
            renewed = AddressBinding(bcadd, current.legacy_addr, self.sim.now + self.lease)
            self._store(renewed)
            return renewed
        for addr in self.pool.hosts():
            text = str(addr)
            if text not in self._by_addr and text != self.gateway:
                binding = AddressBinding(bcadd, text, self.sim.now + self.lease)
                self._store(binding)
                self.sim.record(self.node_id, "bind", f"{bcadd.short()}={text}")
                return binding
        raise AddressPoolExhaustedError(f"no free address in {self.pool}")

    def _store(self, b: AddressBinding) -> None:
        self._by_bcadd[b.bcadd] = b
        self._by_addr[b.legacy_addr] = b

    def unbind(self, bcadd: BcAdd) -> None:
        b = self._by_bcadd.pop(bcadd, None)
        if b is not None:
            del self._by_addr[b.legacy_addr]

    def translate(self, bcadd: BcAdd) -> str:
        self._expire()
        b = self._by_bcadd.get(bcadd)
        if b is None:
            raise NotFoundError(f"no active binding for {bcadd!r}")
        return b.legacy_addr

    def resolve(self, legacy_addr: str) -> BcAdd:
        self._expire()
        b = self._by_addr.get(legacy_addr)
        if b is None:
            raise NotFoundError(f"no active binding for {legacy_addr}")
        return b.bcadd

    def bindings(self) -> list[AddressBinding]:
        self._expire()
        return list(self._by_bcadd.values())

    # -- forwarding ----------------------------------------------------------

    def forward(self, packet: DataPacket, mobility_view=None) -> Delivery:
        view = mobility_view if mobility_view is not None else self.view
        state = view.snapshot() if hasattr(view, "snapshot") else view
        rec = state.mobility_registry.get(packet.dst_bcadd) if state is not None else None
        if rec is not None:
            delivery = Delivery("gnb", rec.serving_gnb, packet)
            if self.net is not None:
                self.net.send(self.node_id, rec.serving_gnb, packet)
        else:
            self._expire()
            dst = self._by_bcadd.get(packet.dst_bcadd)
            if dst is None:
                raise DestinationUnknownError(f"{packet.dst_bcadd!r} has no route")
            src = self._by_bcadd.get(packet.src_bcadd)
            frame = LegacyFrame(
                src.legacy_addr if src else self.gateway, dst.legacy_addr,
                packet.seq, packet.ciphertext, self.sim.now,
            )
            self.egress.append(frame)
            delivery = Delivery("legacy", dst.legacy_addr, packet)
        self.forwarded += 1
        self.sim.record(self.node_id, "forward", f"{delivery.kind}:{delivery.target} seq={packet.seq}")
        return delivery

    def egress_bytes(self) -> bytes:
        w = Writer().u32(len(self.egress))
        for f in self.egress:
            w.raw(f.encode())
        return w.getvalue()

    def write_egress(self, path: str | Path) -> None:
        Path(path).write_bytes(self.egress_bytes())
