"""
Exceptions raised by the flight software and its harness.

Every error carries a stable `code` string; tests and the CLI match on codes, not on
message text.
"""
from typing import List, Optional


class FlightSoftwareError(Exception):
    """Base exception for flight software errors"""
    code = "error"

    def __init__(self, message: str = "", code: Optional[str] = None):
        if code is not None:
            self.code = code
        super().__init__(f"{self.code}: {message}" if message else self.code)


class SchedulingError(FlightSoftwareError):
    """Raised when an event cannot be scheduled on the kernel"""
    code = "scheduling-closed"


class BusError(FlightSoftwareError):
    """Raised for message bus registration and routing violations"""
    pass


class UnknownNodeError(FlightSoftwareError):
    """Raised when a node id is not known to the bus or roster"""
    code = "unknown-node"


class ParameterError(FlightSoftwareError):
    """Raised by remote parameter get/set"""
    pass


class LifecycleTransitionError(FlightSoftwareError):
    """Raised when a lifecycle transition request is refused"""
    code = "invalid-transition"


class CanBusError(FlightSoftwareError):
    """Raised for CAN bus protocol violations"""
    pass


class CodecError(FlightSoftwareError):
    """Base exception for wire format decoding errors"""
    pass


class BadSyncError(CodecError):
    """Raised when the sync word is missing"""
    code = "bad-sync"


class CrcError(CodecError):
    """Raised when the CRC does not verify"""
    code = "crc-error"


class TruncatedError(CodecError):
    """Raised when the buffer ends before the stated lengths"""
    code = "truncated"


class MalformedError(CodecError):
    """Raised when counts or fields are inconsistent"""
    code = "malformed"


class UnknownPacketTypeError(MalformedError):
    """Raised when a telecommand type byte is outside the enumerated set"""
    pass


class StatsError(FlightSoftwareError):
    """Raised when latency statistics cannot be computed"""
    code = "no-samples"


class ScenarioValidationError(FlightSoftwareError):
    """Raised when a scenario has one or more violations; lists all of them"""
    code = "scenario-invalid"

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ArtifactIOError(FlightSoftwareError):
    """Raised when a run artifact cannot be read or written"""
    code = "io-error"


class UnknownBehaviorError(FlightSoftwareError):
    """Raised when a behaviour id is not in the node registry"""
    code = "unknown-behavior"
