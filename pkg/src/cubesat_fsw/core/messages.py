"""
Typed payloads carried on the message bus and inside telecommand arguments.

The bus moves opaque bytes; each message type here owns its big-endian layout through
`to_bytes` / `from_bytes`. The argument layouts of telecommand packets are defined here
too so the TT&C node, the maintenance node and the scenario harness share one encoder.
"""
import struct
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Tuple, Union

from cubesat_fsw.utils.error_handling import MalformedError, TruncatedError

ParameterValue = Union[bool, int, float, str]


class ByteReader:
    """Bounded reader: never reads past the buffer, raises TruncatedError instead."""

    def __init__(self, data: bytes, offset: int = 0, end: int = None):
        self.data = data
        self.offset = offset
        self.end = len(data) if end is None else end

    @property
    def remaining(self) -> int:
        return self.end - self.offset

    def take(self, count: int) -> bytes:
        if count < 0 or self.offset + count > self.end:
            raise TruncatedError(f"need {count} bytes at offset {self.offset}, have {self.remaining}")
        chunk = self.data[self.offset:self.offset + count]
        self.offset += count
        return bytes(chunk)

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def short_text(self) -> str:
        (length,) = self.unpack(">B")
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedError(f"text is not utf-8: {exc}") from exc

    def expect_end(self) -> None:
        if self.remaining:
            raise MalformedError(f"{self.remaining} trailing bytes")


def short_text_bytes(text: str) -> bytes:
    encoded = text.encode("utf-8")
    if len(encoded) > 255:
        raise ValueError(f"text longer than 255 bytes: {text[:32]}...")
    return struct.pack(">B", len(encoded)) + encoded


class PacketType(IntEnum):
    DOWNLINK = 0x10
    PAYLOAD_COMMAND = 0x11
    IMAGING = 0x12
    PARAMETER = 0x13
    NODE_REPLACE = 0x14


class FrameType(IntEnum):
    TELEMETRY = 0x01
    IMAGE = 0x02


@dataclass(frozen=True)
class TimingTick:
    cycle: int
    tick_time: int

    def to_bytes(self) -> bytes:
        return struct.pack(">IQ", self.cycle, self.tick_time)

    @classmethod
    def from_bytes(cls, data: bytes) -> "TimingTick":
        reader = ByteReader(data)
        cycle, tick_time = reader.unpack(">IQ")
        reader.expect_end()
        return cls(cycle, tick_time)


@dataclass(frozen=True)
class TaskFlags:
    """Bus-grant bit array; at most one bit active."""
    bits: Tuple[bool, ...]
    generation: int
    cycle: int = 0

    def __post_init__(self):
        if sum(1 for bit in self.bits if bit) > 1:
            raise ValueError(f"task flags must be one-hot, got {self.bits}")

    @classmethod
    def granting(cls, slot: int, slots: int, generation: int, cycle: int) -> "TaskFlags":
        return cls(tuple(index == slot for index in range(slots)), generation, cycle)

    @property
    def active_index(self):
        for index, bit in enumerate(self.bits):
            if bit:
                return index
        return None

    def to_bytes(self) -> bytes:
        return struct.pack(">IIB", self.generation, self.cycle, len(self.bits)) + bytes(
            1 if bit else 0 for bit in self.bits)

    @classmethod
    def from_bytes(cls, data: bytes) -> "TaskFlags":
        reader = ByteReader(data)
        generation, cycle, count = reader.unpack(">IIB")
        raw = reader.take(count)
        reader.expect_end()
        if any(value not in (0, 1) for value in raw):
            raise MalformedError("flag bits must be 0 or 1")
        try:
            return cls(tuple(bool(value) for value in raw), generation, cycle)
        except ValueError as exc:
            raise MalformedError(str(exc)) from exc


class RecordStatus(IntEnum):
    OK = 0
    NO_RESPONSE = 1
    GARBLED = 2

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")


@dataclass(frozen=True)
class TelemetryRecord:
    payload_id: int
    cycle: int
    data: bytes
    stored_at: int = 0
    status: RecordStatus = RecordStatus.OK

    def to_bytes(self) -> bytes:
        return struct.pack(">BIQBH", self.payload_id, self.cycle, self.stored_at, self.status,
                           len(self.data)) + self.data

    @classmethod
    def from_bytes(cls, data: bytes) -> "TelemetryRecord":
        reader = ByteReader(data)
        payload_id, cycle, stored_at, status, length = reader.unpack(">BIQBH")
        body = reader.take(length)
        reader.expect_end()
        try:
            status = RecordStatus(status)
        except ValueError as exc:
            raise MalformedError(f"unknown record status {status}") from exc
        return cls(payload_id, cycle, body, stored_at, status)


@dataclass(frozen=True)
class Telecommand:
    target: int
    command: bytes

    def to_bytes(self) -> bytes:
        return struct.pack(">BH", self.target, len(self.command)) + self.command

    @classmethod
    def from_bytes(cls, data: bytes) -> "Telecommand":
        reader = ByteReader(data)
        target, length = reader.unpack(">BH")
        command = reader.take(length)
        reader.expect_end()
        return cls(target, command)


@dataclass(frozen=True)
class DownlinkRequest:
    frame_type: FrameType
    cycle_start: int
    cycle_end: int

    def to_args(self) -> bytes:
        return struct.pack(">BII", self.frame_type, self.cycle_start, self.cycle_end)

    @classmethod
    def from_args(cls, args: bytes) -> "DownlinkRequest":
        reader = ByteReader(args)
        frame_type, start, end = reader.unpack(">BII")
        reader.expect_end()
        try:
            return cls(FrameType(frame_type), start, end)
        except ValueError as exc:
            raise MalformedError(f"unknown frame type {frame_type:#04x}") from exc


@dataclass(frozen=True)
class ImageTask:
    capture_time: int
    method_id: str
    exposure_params: bytes = b""

    def to_bytes(self) -> bytes:
        return struct.pack(">Q", self.capture_time) + short_text_bytes(self.method_id) + self.exposure_params

    @classmethod
    def from_bytes(cls, data: bytes) -> "ImageTask":
        reader = ByteReader(data)
        (capture_time,) = reader.unpack(">Q")
        method_id = reader.short_text()
        return cls(capture_time, method_id, reader.take(reader.remaining))


@dataclass(frozen=True)
class ImageBlob:
    image_id: int
    width: int
    height: int
    pixel_data: bytes
    captured_at: int
    bytes_per_pixel: int = 1

    def __post_init__(self):
        expected = self.width * self.height * self.bytes_per_pixel
        if len(self.pixel_data) != expected:
            raise ValueError(f"pixel_data has {len(self.pixel_data)} bytes, expected {expected}")

    def to_bytes(self) -> bytes:
        return struct.pack(">IHHBQ", self.image_id, self.width, self.height, self.bytes_per_pixel,
                           self.captured_at) + self.pixel_data

    @classmethod
    def from_bytes(cls, data: bytes) -> "ImageBlob":
        reader = ByteReader(data)
        image_id, width, height, bpp, captured_at = reader.unpack(">IHHBQ")
        pixels = reader.take(width * height * bpp)
        reader.expect_end()
        return cls(image_id, width, height, pixels, captured_at, bpp)


@dataclass(frozen=True)
class ProcessedImageInfo:
    image_id: int
    method_id: str
    result_bytes: bytes
    processing_duration: int

    def to_bytes(self) -> bytes:
        return (struct.pack(">I", self.image_id) + short_text_bytes(self.method_id)
                + struct.pack(">I", self.processing_duration) + self.result_bytes)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProcessedImageInfo":
        reader = ByteReader(data)
        (image_id,) = reader.unpack(">I")
        method_id = reader.short_text()
        (duration,) = reader.unpack(">I")
        return cls(image_id, method_id, reader.take(reader.remaining), duration)

    def frame_data(self) -> bytes:
        """Record body inside an image downlink frame (the image id travels as the cycle)."""
        return short_text_bytes(self.method_id) + struct.pack(">I", self.processing_duration) + self.result_bytes


@dataclass(frozen=True)
class ProcessingGoal:
    image_id: int
    method_id: str

    def to_bytes(self) -> bytes:
        return struct.pack(">I", self.image_id) + short_text_bytes(self.method_id)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProcessingGoal":
        reader = ByteReader(data)
        (image_id,) = reader.unpack(">I")
        method_id = reader.short_text()
        reader.expect_end()
        return cls(image_id, method_id)


class ValueTag(IntEnum):
    INT = 0
    FLOAT = 1
    STRING = 2
    BOOL = 3


def encode_value(value: ParameterValue) -> bytes:
    if isinstance(value, bool):
        return struct.pack(">BB", ValueTag.BOOL, 1 if value else 0)
    if isinstance(value, int):
        return struct.pack(">Bq", ValueTag.INT, value)
    if isinstance(value, float):
        return struct.pack(">Bd", ValueTag.FLOAT, value)
    if isinstance(value, str):
        encoded = value.encode("utf-8")
        return struct.pack(">BH", ValueTag.STRING, len(encoded)) + encoded
    raise ValueError(f"unsupported parameter value {value!r}")


def decode_value(reader: ByteReader) -> ParameterValue:
    (tag,) = reader.unpack(">B")
    if tag == ValueTag.BOOL:
        return reader.unpack(">B")[0] != 0
    if tag == ValueTag.INT:
        return reader.unpack(">q")[0]
    if tag == ValueTag.FLOAT:
        return reader.unpack(">d")[0]
    if tag == ValueTag.STRING:
        (length,) = reader.unpack(">H")
        return reader.take(length).decode("utf-8", errors="replace")
    raise MalformedError(f"unknown value tag {tag}")


class MaintenanceKind(str, Enum):
    PARAMETER = "parameter"
    REPLACE = "replace"


@dataclass(frozen=True)
class MaintenanceCommand:
    kind: MaintenanceKind
    node: str
    key: str = ""
    value: ParameterValue = 0
    behavior: str = ""

    @classmethod
    def parameter(cls, node: str, key: str, value: ParameterValue) -> "MaintenanceCommand":
        return cls(MaintenanceKind.PARAMETER, node, key=key, value=value)

    @classmethod
    def replace(cls, node: str, behavior: str) -> "MaintenanceCommand":
        return cls(MaintenanceKind.REPLACE, node, behavior=behavior)

    @property
    def packet_type(self) -> PacketType:
        return PacketType.PARAMETER if self.kind is MaintenanceKind.PARAMETER else PacketType.NODE_REPLACE

    def to_args(self) -> bytes:
        if self.kind is MaintenanceKind.PARAMETER:
            return short_text_bytes(self.node) + short_text_bytes(self.key) + encode_value(self.value)
        return short_text_bytes(self.node) + short_text_bytes(self.behavior)

    @classmethod
    def from_args(cls, packet_type: int, args: bytes) -> "MaintenanceCommand":
        reader = ByteReader(args)
        node = reader.short_text()
        if packet_type == PacketType.PARAMETER:
            key = reader.short_text()
            value = decode_value(reader)
            reader.expect_end()
            return cls.parameter(node, key, value)
        if packet_type == PacketType.NODE_REPLACE:
            behavior = reader.short_text()
            reader.expect_end()
            return cls.replace(node, behavior)
        raise MalformedError(f"not a maintenance packet type: {packet_type:#04x}")

    def to_bytes(self) -> bytes:
        return struct.pack(">B", self.packet_type) + self.to_args()

    @classmethod
    def from_bytes(cls, data: bytes) -> "MaintenanceCommand":
        reader = ByteReader(data)
        (packet_type,) = reader.unpack(">B")
        return cls.from_args(packet_type, reader.take(reader.remaining))
