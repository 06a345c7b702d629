"""Exception hierarchy.  Everything raised on bad data derives from FlowmineError."""


class FlowmineError(Exception):
    pass


class UnknownFlagBit(FlowmineError, ValueError):
    pass


class UnknownFlagName(FlowmineError, ValueError):
    pass


class CorruptState(FlowmineError, RuntimeError):
    """An adjacency cell would go negative; the engine's bookkeeping is broken."""


class MalformedRow(FlowmineError, ValueError):
    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row
        self.reason = reason


class NonMonotoneIndex(MalformedRow):
    pass


class FormatMismatch(FlowmineError, ValueError):
    pass


class TruncatedFile(FlowmineError, ValueError):
    pass


class InvalidProfile(FlowmineError, ValueError):
    pass


class EmptyClass(FlowmineError, ValueError):
    pass


class EmptyTrainingSet(FlowmineError, ValueError):
    pass


class SingularCovariance(FlowmineError, ArithmeticError):
    pass


class DegenerateData(FlowmineError, ValueError):
    pass


class OneClassOnly(FlowmineError, ValueError):
    pass


class TooFewSamples(FlowmineError, ValueError):
    pass
