"""Online process-mining preprocessor for TCP packet streams.

Packets are grouped into bidirectional flows, each packet is mapped to one
of 26 event classes, and the transitions seen in the last ``l`` accepted
packets are counted into a 26x26 adjacency matrix.  Every accepted packet
yields a normalized snapshot of that matrix, which the detectors consume.
"""

from .errors import (
    CorruptState,
    DegenerateData,
    EmptyClass,
    EmptyTrainingSet,
    FlowmineError,
    FormatMismatch,
    InvalidProfile,
    MalformedRow,
    NonMonotoneIndex,
    OneClassOnly,
    SingularCovariance,
    TooFewSamples,
    TruncatedFile,
    UnknownFlagBit,
    UnknownFlagName,
)
from .packet_model import (
    N_CLASSES,
    N_RELATIONS,
    Direction,
    EventClass,
    PacketRecord,
    TcpFlag,
    class_index,
    event_class,
    index_to_class,
    parse_flags,
    render_flags,
)
from .flow_tracker import FlowKey, FlowStateTable, Outcome, TransitionOutcome
from .snapshot_engine import (
    AttackTable,
    EngineConfig,
    Snapshot,
    SnapshotEngine,
    StreamStats,
    brute_force_recount,
)

__version__ = "0.1.0"

__all__ = [
    "AttackTable",
    "CorruptState",
    "DegenerateData",
    "Direction",
    "EmptyClass",
    "EmptyTrainingSet",
    "EngineConfig",
    "EventClass",
    "FlowKey",
    "FlowStateTable",
    "FlowmineError",
    "FormatMismatch",
    "InvalidProfile",
    "MalformedRow",
    "N_CLASSES",
    "N_RELATIONS",
    "NonMonotoneIndex",
    "OneClassOnly",
    "Outcome",
    "PacketRecord",
    "SingularCovariance",
    "Snapshot",
    "SnapshotEngine",
    "StreamStats",
    "TcpFlag",
    "TooFewSamples",
    "TransitionOutcome",
    "TruncatedFile",
    "UnknownFlagBit",
    "UnknownFlagName",
    "brute_force_recount",
    "class_index",
    "event_class",
    "index_to_class",
    "parse_flags",
    "render_flags",
]
