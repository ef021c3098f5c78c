"""
Downlink frame and uplink packet wire formats, big-endian.

TelemetryFrame:   EB 90 | type:1 | cycle_start:4 | cycle_end:4 | count:2 |
                  count x {payload_id:1 cycle:4 data_len:2 data} | crc:2
TelecommandPacket: EB 90 | type:1 | target:1 | arg_len:2 | args | crc:2

The CRC is CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection, xorout 0)
over every byte after the sync word. Decoding checks length, sync, then CRC, and only
then trusts the length fields.
"""
import struct
from dataclasses import dataclass
from typing import Iterator, Tuple

import crcmod.predefined

from cubesat_fsw.core.messages import ByteReader, FrameType, PacketType
from cubesat_fsw.utils.error_handling import (
    BadSyncError,
    CrcError,
    MalformedError,
    TruncatedError,
    UnknownPacketTypeError,
)

SYNC = b"\xEB\x90"
FRAME_HEADER = struct.Struct(">BIIH")
PACKET_HEADER = struct.Struct(">BBH")
RECORD_HEADER = struct.Struct(">BIH")
CRC_SIZE = 2
MIN_FRAME_SIZE = len(SYNC) + FRAME_HEADER.size + CRC_SIZE
MIN_PACKET_SIZE = len(SYNC) + PACKET_HEADER.size + CRC_SIZE

_crc_ccitt_false = crcmod.predefined.mkCrcFun("crc-ccitt-false")


def crc16(data: bytes) -> int:
    return _crc_ccitt_false(bytes(data))


def append_crc(body: bytes) -> bytes:
    return bytes(body) + struct.pack(">H", crc16(body))


def crc_ok(data: bytes) -> bool:
    """True when the last two bytes are the CRC of the bytes before them."""
    if len(data) < CRC_SIZE:
        return False
    return crc16(data[:-CRC_SIZE]) == struct.unpack(">H", data[-CRC_SIZE:])[0]


@dataclass(frozen=True)
class FrameRecord:
    payload_id: int
    cycle: int
    data: bytes


@dataclass(frozen=True)
class TelemetryFrame:
    frame_type: FrameType
    cycle_start: int
    cycle_end: int
    records: Tuple[FrameRecord, ...] = ()

    @property
    def record_count(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class TelecommandPacket:
    packet_type: PacketType
    target: int
    args: bytes = b""


def _check_sync(data: bytes, minimum: int) -> None:
    if len(data) < minimum:
        raise TruncatedError(f"{len(data)} bytes, need at least {minimum}")
    if bytes(data[:2]) != SYNC:
        raise BadSyncError(f"expected EB90, got {bytes(data[:2]).hex().upper()}")
    if not crc_ok(data[2:]):
        raise CrcError("checksum mismatch")


def encode_frame(frame: TelemetryFrame) -> bytes:
    frame_type = FrameType(frame.frame_type)
    if frame.records and frame.cycle_start > frame.cycle_end:
        raise ValueError(f"cycle_start {frame.cycle_start} > cycle_end {frame.cycle_end}")
    if len(frame.records) > 0xFFFF:
        raise ValueError("too many records for one frame")
    body = bytearray(FRAME_HEADER.pack(frame_type, frame.cycle_start, frame.cycle_end, len(frame.records)))
    for record in frame.records:
        if len(record.data) > 0xFFFF:
            raise ValueError(f"record data too long: {len(record.data)}")
        body += RECORD_HEADER.pack(record.payload_id, record.cycle, len(record.data))
        body += record.data
    return SYNC + append_crc(bytes(body))


def decode_frame(data: bytes) -> TelemetryFrame:
    data = bytes(data)
    _check_sync(data, MIN_FRAME_SIZE)
    reader = ByteReader(data, offset=len(SYNC), end=len(data) - CRC_SIZE)
    frame_type, cycle_start, cycle_end, count = reader.unpack(FRAME_HEADER.format)
    try:
        frame_type = FrameType(frame_type)
    except ValueError as exc:
        raise MalformedError(f"unknown frame type {frame_type:#04x}") from exc
    if count and cycle_start > cycle_end:
        raise MalformedError(f"cycle range [{cycle_start}, {cycle_end}] is reversed")
    records = []
    for _ in range(count):
        payload_id, cycle, length = reader.unpack(RECORD_HEADER.format)
        records.append(FrameRecord(payload_id, cycle, reader.take(length)))
    reader.expect_end()
    return TelemetryFrame(frame_type, cycle_start, cycle_end, tuple(records))


def encode_packet(packet: TelecommandPacket) -> bytes:
    packet_type = PacketType(packet.packet_type)
    if len(packet.args) > 0xFFFF:
        raise ValueError(f"args too long: {len(packet.args)}")
    body = PACKET_HEADER.pack(packet_type, packet.target, len(packet.args)) + bytes(packet.args)
    return SYNC + append_crc(body)


def decode_packet(data: bytes) -> TelecommandPacket:
    data = bytes(data)
    _check_sync(data, MIN_PACKET_SIZE)
    reader = ByteReader(data, offset=len(SYNC), end=len(data) - CRC_SIZE)
    packet_type, target, arg_len = reader.unpack(PACKET_HEADER.format)
    args = reader.take(arg_len)
    reader.expect_end()
    try:
        packet_type = PacketType(packet_type)
    except ValueError as exc:
        raise UnknownPacketTypeError(f"unknown packet type {packet_type:#04x}") from exc
    return TelecommandPacket(packet_type, target, args)


def frame_length(data: bytes, offset: int = 0) -> int:
    """Length of the frame starting at `offset`, walked from its length fields."""
    reader = ByteReader(data, offset=offset)
    if reader.take(2) != SYNC:
        raise BadSyncError(f"no sync word at offset {offset}")
    _, _, _, count = reader.unpack(FRAME_HEADER.format)
    for _ in range(count):
        _, _, length = reader.unpack(RECORD_HEADER.format)
        reader.take(length)
    reader.take(CRC_SIZE)
    return reader.offset - offset


def iter_frames(stream: bytes) -> Iterator[TelemetryFrame]:
    """Decodes a downlink byte stream of concatenated frames."""
    offset = 0
    while offset < len(stream):
        length = frame_length(stream, offset)
        yield decode_frame(stream[offset:offset + length])
        offset += length

