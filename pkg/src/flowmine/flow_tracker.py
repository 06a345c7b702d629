"""Bidirectional TCP flow reconstruction and the per-flow state table.

A flow starts at a SYN-without-ACK packet, whose source becomes the client
(initiator), and ends at the first packet carrying FIN or RST.  The table
holds the last event class of every open flow for the whole stream, so a
transition is produced even when the flow's previous packet left the
sliding window long ago.
"""

from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional

from .packet_model import Direction, EventClass, PacketRecord, TcpFlag, event_class

Endpoint = tuple  # (ip, port)

_SYN = int(TcpFlag.SYN)
_ACK = int(TcpFlag.ACK)
_TERMINAL = int(TcpFlag.FIN | TcpFlag.RST)


class FlowKey(NamedTuple):
    initiator: Endpoint
    responder: Endpoint


class Outcome(enum.Enum):
    NEW_FLOW = "new_flow"
    CONTINUATION = "continuation"
    TERMINAL = "terminal_continuation"
    IGNORED = "ignored"


@dataclass(frozen=True)
class TransitionOutcome:
    kind: Outcome
    transition: Optional[tuple[EventClass, EventClass]] = None
    key: Optional[FlowKey] = None

    @property
    def accepted(self) -> bool:
        return self.kind is not Outcome.IGNORED


IGNORED = TransitionOutcome(Outcome.IGNORED)


class FlowStateTable:
    """Open flows keyed by (initiator, responder) -> [last class, last activity].

    Entries are kept in least-recently-active order so idle eviction only
    has to look at the front.
    """

    def __init__(self):
        self._flows: OrderedDict[FlowKey, list] = OrderedDict()
        self.opened = 0
        self.closed = 0
        self.evicted = 0

    def __len__(self) -> int:
        return len(self._flows)

    def __contains__(self, key) -> bool:
        return key in self._flows

    def __iter__(self) -> Iterator[FlowKey]:
        return iter(self._flows)

    def state(self, key: FlowKey) -> EventClass:
        return self._flows[key][0]

    def last_seen(self, key: FlowKey) -> float:
        return self._flows[key][1]

    def items(self):
        return ((k, v[0]) for k, v in self._flows.items())

    def match(self, pkt: PacketRecord) -> tuple[Optional[FlowKey], Optional[Direction]]:
        """Find the open flow ``pkt`` belongs to and its direction within it."""
        src = (pkt.src_ip, pkt.src_port)
        dst = (pkt.dst_ip, pkt.dst_port)
        key = FlowKey(src, dst)
        if key in self._flows:
            return key, Direction.CLIENT
        key = FlowKey(dst, src)
        if key in self._flows:
            return key, Direction.SERVER
        return None, None

    def observe(self, pkt: PacketRecord) -> TransitionOutcome:
        """Classify ``pkt`` and update the table accordingly."""
        flows = self._flows
        flags = pkt.flags
        src = (pkt.src_ip, pkt.src_port)
        dst = (pkt.dst_ip, pkt.dst_port)

        key = FlowKey(src, dst)
        entry = flows.get(key)
        direction = Direction.CLIENT
        if entry is None:
            key = FlowKey(dst, src)
            entry = flows.get(key)
            direction = Direction.SERVER

        if entry is not None:
            current = event_class(flags, direction)
            transition = (entry[0], current)
            if flags & _TERMINAL:
                del flows[key]
                self.closed += 1
                return TransitionOutcome(Outcome.TERMINAL, transition, key)
            entry[0] = current
            entry[1] = pkt.timestamp
            flows.move_to_end(key)
            return TransitionOutcome(Outcome.CONTINUATION, transition, key)

        if flags & _SYN and not flags & _ACK:
            key = FlowKey(src, dst)
            current = event_class(flags, Direction.CLIENT)
            flows[key] = [current, pkt.timestamp]
            self.opened += 1
            return TransitionOutcome(Outcome.NEW_FLOW, (EventClass.START, current), key)

        return IGNORED

    def evict_idle(self, now: float, timeout: Optional[float]) -> int:
        """Drop flows idle for longer than ``timeout`` seconds.  ``None`` disables eviction."""
        if timeout is None:
            return 0
        if timeout <= 0:
            raise ValueError("timeout must be positive")
        flows = self._flows
        count = 0
        while flows:
            key, entry = next(iter(flows.items()))
            if now - entry[1] <= timeout:
                break
            del flows[key]
            count += 1
        self.evicted += count
        return count


def observe(table: FlowStateTable, pkt: PacketRecord) -> TransitionOutcome:
    return table.observe(pkt)


def evict_idle(table: FlowStateTable, now: float, timeout: Optional[float]) -> int:
    return table.evict_idle(now, timeout)
