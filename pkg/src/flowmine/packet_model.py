"""Packets, TCP flag sets and the 26-class event taxonomy.

An event class is the concatenation of a packet's enabled flags followed by a
direction indicator, e.g. ``000.ACK.SYN.|S``.  Twenty-three such classes are
recognised; any other combination falls into ``OTHERS``.  ``START`` and
``END`` are pseudo-classes that mark the ends of a flow.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Union

from .errors import UnknownFlagBit, UnknownFlagName

N_CLASSES = 26
N_RELATIONS = N_CLASSES * N_CLASSES


class TcpFlag(enum.IntFlag):
    FIN = 0x001
    SYN = 0x002
    RST = 0x004
    PSH = 0x008
    ACK = 0x010
    URG = 0x020
    ECE = 0x040
    CWR = 0x080
    NS = 0x100


ALL_FLAGS = 0x1FF

# Rendering order of flag names inside an event-class string.
RENDER_ORDER = (
    TcpFlag.NS,
    TcpFlag.CWR,
    TcpFlag.ECE,
    TcpFlag.URG,
    TcpFlag.ACK,
    TcpFlag.PSH,
    TcpFlag.RST,
    TcpFlag.SYN,
    TcpFlag.FIN,
)


class Direction(enum.Enum):
    CLIENT = "C"
    SERVER = "S"


class EventClass(enum.Enum):
    """The 26 event classes.  ``value`` is the row/column index into A."""

    SYN_C = 0
    ACK_SYN_S = 1
    ACK_C = 2
    ACK_PSH_C = 3
    ACK_PSH_S = 4
    ACK_FIN_C = 5
    ACK_S = 6
    ACK_FIN_S = 7
    ACK_RST_C = 8
    ACK_RST_S = 9
    RST_S = 10
    ACK_PSH_FIN_S = 11
    RST_C = 12
    CWR_ECE_SYN_C = 13
    ECE_ACK_SYN_S = 14
    NS_ACK_FIN_S = 15
    ACK_PSH_FIN_C = 16
    CWR_ACK_PSH_C = 17
    CWR_ACK_C = 18
    CWR_ACK_S = 19
    CWR_ACK_PSH_S = 20
    CWR_ACK_RST_S = 21
    CWR_ACK_RST_C = 22
    START = 23
    END = 24
    OTHERS = 25

    @property
    def index(self) -> int:
        return self.value

    @property
    def label(self) -> str:
        return _LABELS[self.value]

    def __str__(self) -> str:
        return self.label


_SPECIAL = {EventClass.START, EventClass.END, EventClass.OTHERS}


def render_flags(flags: int, direction: Direction) -> str:
    """Canonical string for a flag set seen in ``direction``."""
    parts = ["000."]
    for flag in RENDER_ORDER:
        if flags & flag:
            parts.append(flag.name + ".")
    parts.append("|" + direction.value)
    return "".join(parts)


def _parse_member_name(name: str) -> str:
    *flag_names, side = name.split("_")
    bits = 0
    for flag_name in flag_names:
        bits |= TcpFlag[flag_name]
    return render_flags(bits, Direction(side))


_LABELS = [
    ec.name if ec in _SPECIAL else _parse_member_name(ec.name) for ec in EventClass
]
_BY_LABEL = {label: EventClass(i) for i, label in enumerate(_LABELS)}
_BY_INDEX = list(EventClass)

# (flags, direction) -> class, precomputed for every 9-bit flag value.
_LOOKUP = {
    d: [_BY_LABEL.get(render_flags(bits, d), EventClass.OTHERS) for bits in range(ALL_FLAGS + 1)]
    for d in Direction
}


def event_class(flags: int, direction: Direction) -> EventClass:
    """Map a flag set and direction to its event class; unknown combinations give OTHERS."""
    return _LOOKUP[direction][flags & ALL_FLAGS]


def class_index(ec: EventClass) -> int:
    return ec.value


def index_to_class(index: int) -> EventClass:
    return _BY_INDEX[index]


def class_from_label(label: str) -> EventClass:
    return _BY_LABEL[label]


FlagInput = Union[str, int, Iterable[str]]


def parse_flags(raw: FlagInput) -> TcpFlag:
    """Parse a tshark-style hex mask (``"0x0012"``) or a list of flag names.

    >>> parse_flags("0x0012")
    <TcpFlag.ACK|SYN: 18>
    >>> parse_flags(["SYN", "ACK"]) == parse_flags("0x12")
    True
    """
    if isinstance(raw, str):
        try:
            bits = int(raw, 16)
        except ValueError:
            raise UnknownFlagBit(f"not a hex flag mask: {raw!r}") from None
    elif isinstance(raw, int):
        bits = raw
    else:
        bits = 0
        for name in raw:
            try:
                bits |= TcpFlag[name.strip().upper()]
            except KeyError:
                raise UnknownFlagName(f"unknown TCP flag name: {name!r}") from None
        return TcpFlag(bits)
    if bits < 0 or bits & ~ALL_FLAGS:
        raise UnknownFlagBit(f"flag mask {bits:#06x} sets bits outside the nine TCP flags")
    return TcpFlag(bits)


@dataclass(frozen=True)
class PacketRecord:
    """One observed TCP packet.  ``flags`` is a 9-bit mask (see :class:`TcpFlag`)."""

    index: int
    timestamp: float
    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    flags: int

    def __post_init__(self):
        if not 0 <= self.src_port <= 65535 or not 0 <= self.dst_port <= 65535:
            raise ValueError(f"port out of range in packet {self.index}")
        if self.flags & ~ALL_FLAGS:
            raise UnknownFlagBit(f"packet {self.index}: flag mask {self.flags:#06x}")

    @property
    def src(self) -> tuple[str, int]:
        return (self.src_ip, self.src_port)

    @property
    def dst(self) -> tuple[str, int]:
        return (self.dst_ip, self.dst_port)

    def has(self, flag: TcpFlag) -> bool:
        return bool(self.flags & flag)
