"""Deterministic synthetic TCP traffic for desk-scale tests and benchmarks.

Three archetypes are available.  They are stylised stand-ins, not
reproductions of any real attack capture:

* ``normal``   handshake, a few data/ack packets in both directions, one FIN.
* ``synflood`` lone client SYNs from a small pool of attacker hosts, never answered.
* ``burst``    many complete but minimal flows from one attacker host
               (handshake, one request/response, client RST).

Flows are interleaved by keeping ``concurrency`` flows open and picking the
next packet from a random open flow.  Generation is lazy, so arbitrarily
long streams use constant memory.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, replace
from typing import Iterator

from .errors import InvalidProfile
from .packet_model import PacketRecord, TcpFlag
from .snapshot_engine import AttackEntry, AttackTable

SYN = int(TcpFlag.SYN)
ACK = int(TcpFlag.ACK)
PSH = int(TcpFlag.PSH)
FIN = int(TcpFlag.FIN)
RST = int(TcpFlag.RST)

CLIENT, SERVER = True, False

DEFAULT_SEED = 20211029


class Kind(enum.Enum):
    NORMAL = "normal"
    SYN_FLOOD = "synflood"
    SHORT_FLOW_BURST = "burst"


ATTACK_NAMES = {
    Kind.SYN_FLOOD: "SynFlood",
    Kind.SHORT_FLOW_BURST: "ShortFlowBurst",
}

_SERVER_PORTS = (80, 443, 22, 21, 8080)
_DATA_CHOICES = ((ACK | PSH, CLIENT), (ACK | PSH, SERVER), (ACK, CLIENT), (ACK, SERVER))
_DATA_WEIGHTS = (3, 4, 3, 2)
_STRAY_FLAGS = (ACK, ACK | PSH, ACK | FIN)


@dataclass(frozen=True)
class SynthProfile:
    """Parameters for :func:`generate`.

    ``background`` is the probability that any given flow is a normal flow
    rather than one of ``kind``; ``stray_fraction`` is the per-packet
    probability of emitting a packet that belongs to no open flow (the
    tracker ignores those).
    """

    kind: Kind = Kind.NORMAL
    flow_count: int = 100
    data_packets: tuple[int, int] = (2, 12)
    concurrency: int = 8
    background: float = 0.0
    stray_fraction: float = 0.0
    clients: int = 64
    servers: int = 4
    attackers: int = 4
    start_time: float = 1_518_000_000.0
    rate: float = 2000.0
    first_index: int = 1

    def validate(self) -> "SynthProfile":
        lo, hi = self.data_packets
        if self.flow_count < 0:
            raise InvalidProfile("flow_count must be >= 0")
        if lo < 0 or hi < lo:
            raise InvalidProfile(f"bad data_packets range {self.data_packets}")
        if self.concurrency < 1:
            raise InvalidProfile("concurrency must be >= 1")
        if not 0.0 <= self.background <= 1.0:
            raise InvalidProfile("background must be in [0, 1]")
        if not 0.0 <= self.stray_fraction < 1.0:
            raise InvalidProfile("stray_fraction must be in [0, 1)")
        if self.clients < 1 or self.servers < 1 or self.attackers < 1:
            raise InvalidProfile("endpoint pools must be non-empty")
        if self.rate <= 0:
            raise InvalidProfile("rate must be positive")
        return self

    def with_(self, **kw) -> "SynthProfile":
        return replace(self, **kw)


def client_ip(i: int) -> str:
    return f"192.168.{i // 250}.{i % 250 + 2}"


def server_ip(i: int) -> str:
    return f"10.0.0.{i + 2}"


def attacker_ip(i: int) -> str:
    return f"203.0.113.{i + 2}"


def attack_table(profile: SynthProfile) -> AttackTable:
    """Attack table labelling every attacker host of ``profile``."""
    if profile.kind is Kind.NORMAL:
        return AttackTable()
    name = ATTACK_NAMES[profile.kind]
    n = 1 if profile.kind is Kind.SHORT_FLOW_BURST else profile.attackers
    return AttackTable(AttackEntry(attacker_ip(i), name) for i in range(n))


class _Flow:
    __slots__ = ("client", "server", "script", "pos")

    def __init__(self, client, server, script):
        self.client = client
        self.server = server
        self.script = script
        self.pos = 0


def _normal_script(rng: random.Random, lo: int, hi: int) -> list:
    script = [(SYN, CLIENT), (SYN | ACK, SERVER), (ACK, CLIENT)]
    n = rng.randint(lo, hi)
    script.extend(rng.choices(_DATA_CHOICES, _DATA_WEIGHTS, k=n))
    if n == 0:
        script.append((ACK | FIN, CLIENT))
    else:
        r = rng.random()
        if r < 0.7:
            script.append((ACK | FIN, CLIENT))
        elif r < 0.9:
            script.append((ACK | FIN, SERVER))
        else:
            script.append((ACK | RST, CLIENT))
    return script


_BURST_SCRIPT = [(SYN, CLIENT), (SYN | ACK, SERVER), (ACK, CLIENT),
                 (ACK | PSH, CLIENT), (ACK | PSH, SERVER), (ACK | RST, CLIENT)]


def generate(profile: SynthProfile, seed: int = DEFAULT_SEED) -> Iterator[PacketRecord]:
    """Yield the packet stream for ``profile``; identical for identical (profile, seed)."""
    profile = profile.validate()
    rng = random.Random(seed)
    lo, hi = profile.data_packets
    port_counter = 0
    attacker_rr = 0

    def next_port() -> int:
        nonlocal port_counter
        port_counter += 1
        return 1024 + port_counter % 64000

    def open_flow() -> _Flow:
        nonlocal attacker_rr
        kind = profile.kind
        if kind is not Kind.NORMAL and rng.random() < profile.background:
            kind = Kind.NORMAL
        if kind is Kind.NORMAL:
            srv = rng.randrange(profile.servers)
            return _Flow((client_ip(rng.randrange(profile.clients)), next_port()),
                         (server_ip(srv), _SERVER_PORTS[srv % len(_SERVER_PORTS)]),
                         _normal_script(rng, lo, hi))
        if kind is Kind.SYN_FLOOD:
            attacker_rr = (attacker_rr + 1) % profile.attackers
            return _Flow((attacker_ip(attacker_rr), next_port()), (server_ip(0), 80),
                         [(SYN, CLIENT)])
        return _Flow((attacker_ip(0), next_port()), (server_ip(0), 22), _BURST_SCRIPT)

    remaining = profile.flow_count
    active: list[_Flow] = []
    while remaining and len(active) < profile.concurrency:
        active.append(open_flow())
        remaining -= 1

    ts = profile.start_time
    index = profile.first_index
    rate = profile.rate
    stray = profile.stray_fraction
    while active:
        ts += rng.expovariate(rate)
        if stray and rng.random() < stray:
            # low source ports are never used by generated flows, so this matches nothing
            yield PacketRecord(index, ts, client_ip(rng.randrange(profile.clients)),
                               rng.randrange(1, 1024), server_ip(rng.randrange(profile.servers)),
                               80, rng.choice(_STRAY_FLAGS))
            index += 1
            continue
        slot = rng.randrange(len(active))
        flow = active[slot]
        flags, from_client = flow.script[flow.pos]
        flow.pos += 1
        src, dst = (flow.client, flow.server) if from_client else (flow.server, flow.client)
        yield PacketRecord(index, ts, src[0], src[1], dst[0], dst[1], flags)
        index += 1
        if flow.pos == len(flow.script):
            if remaining:
                active[slot] = open_flow()
                remaining -= 1
            else:
                active[slot] = active[-1]
                active.pop()


def mixed(parts: list[tuple[SynthProfile, int]]) -> Iterator[PacketRecord]:
    """Concatenate several generated streams, renumbering frames and keeping time increasing."""
    index = 1
    t0 = None
    for profile, seed in parts:
        last_ts = None
        for p in generate(profile.with_(first_index=index, start_time=t0 or profile.start_time), seed):
            last_ts = p.timestamp
            index = p.index + 1
            yield p
        if last_ts is not None:
            t0 = last_ts
