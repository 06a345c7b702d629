"""Sliding-window adjacency matrix over flow transitions.

The engine keeps the last ``l`` transitions in a FIFO buffer and their counts
in a 26x26 integer matrix ``A``.  Each accepted packet costs at most two cell
updates: the transition leaving the window is decremented and the new one is
incremented.  Once the buffer is full, every accepted packet emits a
snapshot ``A / l``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np

from .errors import CorruptState, MalformedRow
from .flow_tracker import FlowStateTable, Outcome
from .packet_model import N_CLASSES, N_RELATIONS, EventClass, PacketRecord

log = logging.getLogger(__name__)

NORMAL = "Normal"
DEFAULT_WINDOW = 500

_END = EventClass.END.value


@dataclass(frozen=True)
class AttackEntry:
    ip: str
    attack_type: str
    start: Optional[float] = None
    end: Optional[float] = None

    def covers(self, ts: float) -> bool:
        if self.start is not None and ts < self.start:
            return False
        if self.end is not None and ts > self.end:
            return False
        return True


class AttackTable:
    """IP -> attack type, optionally restricted to a closed time range.

    A packet is labelled with the first entry (in file order) whose IP is its
    source or destination and whose range contains its timestamp.
    """

    def __init__(self, entries: Iterable[AttackEntry] = ()):
        self.entries = list(entries)
        self._by_ip: dict[str, list[AttackEntry]] = {}
        for e in self.entries:
            self._by_ip.setdefault(e.ip, []).append(e)

    def __len__(self):
        return len(self.entries)

    def __bool__(self):
        return bool(self.entries)

    def lookup(self, ip: str, ts: float) -> Optional[AttackEntry]:
        for e in self._by_ip.get(ip, ()):
            if e.covers(ts):
                return e
        return None

    def label_for(self, pkt: PacketRecord) -> str:
        if not self._by_ip:
            return NORMAL
        hit_src = self.lookup(pkt.src_ip, pkt.timestamp)
        hit_dst = self.lookup(pkt.dst_ip, pkt.timestamp)
        if hit_src is None and hit_dst is None:
            return NORMAL
        if hit_src is None:
            return hit_dst.attack_type
        if hit_dst is None:
            return hit_src.attack_type
        return min(hit_src, hit_dst, key=self.entries.index).attack_type

    @classmethod
    def from_csv(cls, path) -> "AttackTable":
        """Load ``ip,attack_type[,start_ts,end_ts]`` rows; a header row is optional."""
        entries = []
        with open(path, newline="", encoding="utf-8") as fh:
            for rownum, row in enumerate(csv.reader(fh), start=1):
                if not row or not "".join(row).strip():
                    continue
                if rownum == 1 and row[0].strip().lower() == "ip":
                    continue
                if len(row) not in (2, 4):
                    raise MalformedRow(rownum, f"expected 2 or 4 fields, got {len(row)}")
                ip, attack = row[0].strip(), row[1].strip()
                start = end = None
                if len(row) == 4:
                    try:
                        start = float(row[2]) if row[2].strip() else None
                        end = float(row[3]) if row[3].strip() else None
                    except ValueError:
                        raise MalformedRow(rownum, "bad time range") from None
                if not ip or not attack:
                    raise MalformedRow(rownum, "empty ip or attack type")
                entries.append(AttackEntry(ip, attack, start, end))
        return cls(entries)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ip", "attack_type", "start_ts", "end_ts"])
            for e in self.entries:
                w.writerow([e.ip, e.attack_type,
                            "" if e.start is None else repr(e.start),
                            "" if e.end is None else repr(e.end)])


def label_for(pkt: PacketRecord, attack_table: Optional[AttackTable]) -> str:
    if attack_table is None:
        return NORMAL
    return attack_table.label_for(pkt)


@dataclass(frozen=True)
class EngineConfig:
    window: int = DEFAULT_WINDOW
    attack_table: Optional[AttackTable] = None
    evict_timeout: Optional[float] = None

    def __post_init__(self):
        if int(self.window) != self.window or self.window < 1:
            raise ValueError(f"window size must be a positive integer, got {self.window!r}")
        if self.evict_timeout is not None and self.evict_timeout <= 0:
            raise ValueError("evict_timeout must be positive")


@dataclass(eq=False)
class Snapshot:
    """A normalized process model: transition frequencies over the last ``l`` transitions."""

    matrix: np.ndarray
    packet_index: int
    timestamp: float
    label: str = NORMAL

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64).reshape(N_CLASSES, N_CLASSES)

    def __eq__(self, other):
        if not isinstance(other, Snapshot):
            return NotImplemented
        return (self.packet_index == other.packet_index
                and self.timestamp == other.timestamp
                and self.label == other.label
                and np.array_equal(self.matrix, other.matrix))

    def flat(self) -> np.ndarray:
        return self.matrix.reshape(N_RELATIONS)

    def nonzero(self) -> dict[tuple[int, int], float]:
        rows, cols = np.nonzero(self.matrix)
        return {(int(i), int(j)): float(self.matrix[i, j]) for i, j in zip(rows, cols)}


@dataclass
class StreamStats:
    packets: int = 0
    accepted: int = 0
    ignored: int = 0
    flows_opened: int = 0
    flows_closed: int = 0
    flows_evicted: int = 0
    snapshots: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class TransitionBuffer:
    """FIFO of the last ``capacity`` transitions, stored as flat cells ``from * 26 + to``."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._ring = np.zeros(capacity, dtype=np.int64)
        self._head = 0  # next slot to write; the oldest entry once full
        self._size = 0

    def __len__(self) -> int:
        return self._size

    @property
    def full(self) -> bool:
        return self._size == self.capacity

    def push(self, cell: int) -> Optional[int]:
        """Append ``cell``; return the entry pushed out of a full buffer, else None."""
        ring = self._ring
        head = self._head
        old = int(ring[head]) if self._size == self.capacity else None
        ring[head] = cell
        self._head = head + 1 if head + 1 < self.capacity else 0
        if old is None:
            self._size += 1
        return old

    def cells(self) -> np.ndarray:
        """Occupied entries, in storage (not arrival) order."""
        return self._ring[:self._size] if self._size < self.capacity else self._ring

    def __iter__(self) -> Iterator[tuple[int, int]]:
        """(from, to) index pairs, oldest first."""
        if self._size < self.capacity:
            order = self._ring[:self._size]
        else:
            order = np.roll(self._ring, -self._head)
        for cell in order.tolist():
            yield divmod(cell, N_CLASSES)


def brute_force_recount(buffer) -> np.ndarray:
    """Count a transition buffer from scratch into a 26x26 integer matrix.

    Accepts a :class:`TransitionBuffer` or any iterable of (from, to) index
    pairs.  This is the test oracle for the engine's incremental updates.
    """
    if isinstance(buffer, TransitionBuffer):
        cells = buffer.cells()
    else:
        cells = np.array([i * N_CLASSES + j for i, j in buffer], dtype=np.int64)
    return np.bincount(cells, minlength=N_RELATIONS).reshape(N_CLASSES, N_CLASSES)


class SnapshotEngine:
    """Stream packets in, get snapshots out.

    >>> from flowmine.packet_model import PacketRecord
    >>> eng = SnapshotEngine(EngineConfig(window=1))
    >>> snap = eng.process_packet(PacketRecord(1, 0.0, "a", 1, "b", 2, 0x002))
    >>> float(snap.matrix.sum())
    1.0
    """

    def __init__(self, config: EngineConfig = EngineConfig(), table: Optional[FlowStateTable] = None):
        self.config = config
        self.window = config.window
        self.table = table if table is not None else FlowStateTable()
        self.buffer = TransitionBuffer(config.window)
        self._counts = np.zeros(N_RELATIONS, dtype=np.int64)
        self.stats = StreamStats()
        self._last_index: Optional[int] = None

    @property
    def counts(self) -> np.ndarray:
        """The integer adjacency matrix A (a read-only view)."""
        view = self._counts.reshape(N_CLASSES, N_CLASSES).view()
        view.flags.writeable = False
        return view

    @property
    def full(self) -> bool:
        return self.buffer.full

    def push_transition(self, transition: tuple[EventClass, EventClass],
                        pkt: PacketRecord) -> Optional[Snapshot]:
        src, dst = transition
        if dst.value == _END:
            raise ValueError("transitions into END are not counted")
        cell = src.value * N_CLASSES + dst.value
        counts = self._counts
        old = self.buffer.push(cell)
        if old is not None:
            if counts[old] <= 0:
                raise CorruptState(f"cell {divmod(old, N_CLASSES)} would become negative")
            counts[old] -= 1
        counts[cell] += 1
        if old is None and not self.buffer.full:
            return None
        self.stats.snapshots += 1
        return Snapshot(counts / self.window, pkt.index, pkt.timestamp,
                        label_for(pkt, self.config.attack_table))

    def process_packet(self, pkt: PacketRecord) -> Optional[Snapshot]:
        stats = self.stats
        stats.packets += 1
        timeout = self.config.evict_timeout
        if timeout is not None:
            stats.flows_evicted += self.table.evict_idle(pkt.timestamp, timeout)
        outcome = self.table.observe(pkt)
        if outcome.kind is Outcome.IGNORED:
            stats.ignored += 1
            return None
        stats.accepted += 1
        if outcome.kind is Outcome.NEW_FLOW:
            stats.flows_opened += 1
        elif outcome.kind is Outcome.TERMINAL:
            stats.flows_closed += 1
        return self.push_transition(outcome.transition, pkt)

    def run(self, packets: Iterable[PacketRecord]) -> Iterator[Snapshot]:
        for pkt in packets:
            snap = self.process_packet(pkt)
            if snap is not None:
                yield snap


def process_packet(engine: SnapshotEngine, pkt: PacketRecord) -> Optional[Snapshot]:
    return engine.process_packet(pkt)


def push_transition(engine: SnapshotEngine, transition, pkt: PacketRecord) -> Optional[Snapshot]:
    return engine.push_transition(transition, pkt)
