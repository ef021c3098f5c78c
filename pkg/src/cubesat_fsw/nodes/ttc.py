"""
TT&C node: stores processed telemetry, frames it for downlink on request, and unpacks
uplinked telecommand packets to the nodes that handle them.
"""
import logging
from pathlib import Path
from typing import Dict, List, Tuple, Union

from cubesat_fsw.codec.telemetry_codec import (
    FrameRecord,
    TelemetryFrame,
    decode_packet,
    encode_frame,
)
from cubesat_fsw.core.message_bus import Envelope
from cubesat_fsw.core.messages import (
    DownlinkRequest,
    FrameType,
    ImageTask,
    MaintenanceCommand,
    PacketType,
    ProcessedImageInfo,
    Telecommand,
    TelemetryRecord,
)
from cubesat_fsw.core.timeline import EventKind, Timeline
from cubesat_fsw.nodes.base import MAINTENANCE_TOPIC, TELECOMMAND_TOPIC, FlightNode, telemetry_topic
from cubesat_fsw.nodes.imaging import ImagingClient
from cubesat_fsw.nodes.registry import register_behavior
from cubesat_fsw.utils.error_handling import ArtifactIOError, CodecError, CrcError, UnknownPacketTypeError
from cubesat_fsw.utils.logger import log_event


class DownlinkSink:
    """Ordered byte stream of downlinked frames; outlives any TT&C instance."""

    def __init__(self, timeline: Timeline):
        self.timeline = timeline
        self.frames: List[bytes] = []

    def emit(self, node: str, frame: TelemetryFrame, data: bytes) -> None:
        self.frames.append(data)
        self.timeline.record(node, EventKind.FRAME_OUT, type=f"{int(frame.frame_type):#04x}",
                             start=frame.cycle_start, end=frame.cycle_end, records=frame.record_count,
                             size=len(data))

    def to_bytes(self) -> bytes:
        return b"".join(self.frames)

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(self.to_bytes())
        except OSError as exc:
            raise ArtifactIOError(f"cannot write downlink to {path}: {exc}") from exc
        return path


@register_behavior("ttc")
class TtcNode(FlightNode):
    kind = "ttc"

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        self.records: Dict[Tuple[int, int], TelemetryRecord] = {}
        self.images: Dict[int, ProcessedImageInfo] = {}
        self.imaging = ImagingClient(self, self.store_image)

    def on_configure(self) -> None:
        for payload_node in self.ctx.can_bus.slots:
            self.subscribe(telemetry_topic(payload_node), self.on_telemetry)

    # downlink side

    def on_telemetry(self, envelope: Envelope) -> None:
        if not self.active:
            return
        record = TelemetryRecord.from_bytes(envelope.payload)
        key = (record.payload_id, record.cycle)
        if key in self.records:
            self.record(EventKind.LOG, "duplicate-record", payload_id=record.payload_id, cycle=record.cycle)
            return
        self.records[key] = TelemetryRecord(record.payload_id, record.cycle, record.data,
                                            self.kernel.now(), record.status)

    def store_image(self, info: ProcessedImageInfo) -> None:
        self.images[info.image_id] = info

    def build_frame(self, request: DownlinkRequest) -> TelemetryFrame:
        start, end = request.cycle_start, request.cycle_end
        if request.frame_type is FrameType.IMAGE:
            records = [FrameRecord(0, image_id, self.images[image_id].frame_data())
                       for image_id in sorted(self.images) if start <= image_id <= end]
        else:
            ordered = sorted(self.records.values(), key=lambda rec: (rec.cycle, rec.payload_id))
            records = [FrameRecord(rec.payload_id, rec.cycle, rec.data) for rec in ordered
                       if start <= rec.cycle <= end]
        return TelemetryFrame(request.frame_type, start, end, tuple(records))

    def on_downlink(self, request: DownlinkRequest) -> bytes:
        frame = self.build_frame(request)
        data = encode_frame(frame)
        if self.ctx.downlink is not None:
            self.ctx.downlink.emit(self.node_id, frame, data)
        return data

    # uplink side

    def on_uplink(self, packet_bytes: bytes) -> None:
        if not self.active:
            self.record(EventKind.LOG, "uplink-dropped", state=self.state.value)
            return
        try:
            packet = decode_packet(packet_bytes)
        except CrcError:
            self._reject("uplink-crc-error", size=len(packet_bytes))
            return
        except UnknownPacketTypeError:
            self._reject("uplink-unknown-type", type=f"{packet_bytes[2]:#04x}")
            return
        except CodecError as exc:
            self._reject("uplink-malformed", reason=exc.code)
            return
        try:
            self._route(packet.packet_type, packet.target, packet.args)
        except CodecError as exc:
            self._reject("uplink-malformed", reason=exc.code, type=f"{int(packet.packet_type):#04x}")

    def _route(self, packet_type: PacketType, target: int, args: bytes) -> None:
        if packet_type is PacketType.DOWNLINK:
            self.on_downlink(DownlinkRequest.from_args(args))
        elif packet_type is PacketType.PAYLOAD_COMMAND:
            self.bus.publish(self.node_id, TELECOMMAND_TOPIC, Telecommand(target, args).to_bytes())
        elif packet_type is PacketType.IMAGING:
            self.imaging.run(ImageTask.from_bytes(args))
        else:
            command = MaintenanceCommand.from_args(packet_type, args)
            self.bus.publish(self.node_id, MAINTENANCE_TOPIC, command.to_bytes())

    def _reject(self, reason: str, **fields) -> None:
        self.record(EventKind.LOG, reason, **fields)
        log_event("UPLINK_REJECTED", level=logging.WARNING, reason=reason, sim_time_us=self.kernel.now(), **fields)
