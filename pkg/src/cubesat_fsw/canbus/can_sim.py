"""
Simulated CAN bus shared by the payload nodes.

Ownership is granted by the task-flag schedule, not by identifier arbitration: a node
may acquire the bus only while its flag bit is active, and only one node owns it at a
time. Devices answer wake-up frames after their response delay; the response travels
as 8-byte frames which the owner reassembles in order.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Union

import can

from cubesat_fsw.codec.telemetry_codec import append_crc
from cubesat_fsw.core.message_bus import TIMEOUT, NodeId
from cubesat_fsw.core.messages import TaskFlags
from cubesat_fsw.core.sim_kernel import SimKernel
from cubesat_fsw.core.timeline import EventKind, Timeline
from cubesat_fsw.utils.error_handling import CanBusError
from cubesat_fsw.utils.logger import log_event

MAX_DLC = 8
MAX_ID = 0x7FF
WAKE_UP = 0x01
COMMAND = 0x02
DEVICE_ID_BASE = 0x100


class AcquireResult(str, Enum):
    GRANTED = "granted"
    BUSY = "busy"


class FailureMode(str, Enum):
    NONE = "none"
    SILENT = "silent"
    GARBLED = "garbled"


def make_frame(arbitration_id: int, data: bytes) -> can.Message:
    if not 0 <= arbitration_id <= MAX_ID:
        raise ValueError(f"CAN id {arbitration_id:#x} is not an 11-bit id")
    if len(data) > MAX_DLC:
        raise ValueError(f"CAN frame carries at most {MAX_DLC} bytes, got {len(data)}")
    return can.Message(arbitration_id=arbitration_id, data=bytes(data), is_extended_id=False, check=True)


def chunk_frames(arbitration_id: int, payload: bytes) -> List[can.Message]:
    return [make_frame(arbitration_id, payload[i:i + MAX_DLC]) for i in range(0, len(payload), MAX_DLC)]


def reassemble(frames: Sequence[can.Message]) -> bytes:
    return b"".join(bytes(frame.data) for frame in frames)


def device_id_for(payload_number: int) -> int:
    return DEVICE_ID_BASE + payload_number


def standard_response(device_id: int, body_size: int = 14) -> bytes:
    """Deterministic sensor body followed by its CRC-16."""
    body = bytes((device_id + index * 7) & 0xFF for index in range(body_size))
    return append_crc(body)


@dataclass
class DeviceModel:
    device_id: int
    response_delay: int
    response_payload: bytes = b""
    failure_mode: FailureMode = FailureMode.NONE

    def __post_init__(self):
        if not 0 <= self.device_id <= MAX_ID:
            raise ValueError(f"device id {self.device_id:#x} is not an 11-bit id")
        self.failure_mode = FailureMode(self.failure_mode)
        if not self.response_payload:
            self.response_payload = standard_response(self.device_id)

    def response(self) -> Optional[bytes]:
        if self.failure_mode is FailureMode.SILENT:
            return None
        if self.failure_mode is FailureMode.GARBLED:
            corrupted = bytearray(self.response_payload)
            corrupted[0] ^= 0xFF
            return bytes(corrupted)
        return self.response_payload


@dataclass
class BusOwnership:
    owner: Optional[NodeId] = None
    acquired_at: int = 0


ResponseCallback = Callable[[Union[List[can.Message], object]], None]


@dataclass
class _PendingResponse:
    event_id: int
    owner: NodeId
    device_id: int
    frames: int


@dataclass
class _Waiter:
    owner: NodeId
    on_complete: ResponseCallback
    timeout_event: int


class CanBus:
    def __init__(self, kernel: SimKernel, timeline: Timeline, slots: Sequence[NodeId] = ()):
        self.kernel = kernel
        self.timeline = timeline
        self.slots: List[NodeId] = list(slots)
        self.flags: Optional[TaskFlags] = None
        self.ownership = BusOwnership()
        self.devices: Dict[int, DeviceModel] = {}
        self.sent: List[can.Message] = []
        self._pending_responses: Dict[int, _PendingResponse] = {}
        self._response_seq = 0
        self._waiter: Optional[_Waiter] = None
        self._inbox: List[can.Message] = []

    @property
    def owner(self) -> Optional[NodeId]:
        return self.ownership.owner

    @property
    def is_free(self) -> bool:
        return self.ownership.owner is None

    def add_device(self, device: DeviceModel) -> None:
        self.devices[device.device_id] = device

    def install_flags(self, flags: TaskFlags) -> None:
        if len(flags.bits) != len(self.slots):
            raise CanBusError(f"{len(flags.bits)} flag bits for {len(self.slots)} slots", code="malformed")
        self.flags = flags

    def scheduled(self, node: NodeId) -> bool:
        if self.flags is None or node not in self.slots:
            return False
        return self.flags.active_index == self.slots.index(node)

    def _require_owner(self, node: NodeId, operation: str) -> None:
        if self.ownership.owner != node:
            self.timeline.record(node, EventKind.LOG, "not-owner", operation=operation,
                                 owner=self.ownership.owner or "none")
            log_event("CAN_NOT_OWNER", level=logging.WARNING, node=node, operation=operation,
                      owner=self.ownership.owner, sim_time_us=self.kernel.now())
            raise CanBusError(f"{node} does not own the bus ({operation})", code="not-owner")

    def acquire(self, node: NodeId) -> AcquireResult:
        if not self.scheduled(node):
            self.timeline.record(node, EventKind.LOG, "not-scheduled",
                                 generation=self.flags.generation if self.flags else "none")
            log_event("CAN_NOT_SCHEDULED", level=logging.WARNING, node=node, sim_time_us=self.kernel.now())
            raise CanBusError(f"{node} has no active task flag", code="not-scheduled")
        if self.ownership.owner is not None and self.ownership.owner != node:
            self.timeline.record(node, EventKind.LOG, "bus-busy", owner=self.ownership.owner)
            return AcquireResult.BUSY
        if self.ownership.owner is None:
            self.ownership = BusOwnership(node, self.kernel.now())
            self.timeline.record(node, EventKind.ACQUIRE, "can", generation=self.flags.generation)
        return AcquireResult.GRANTED

    def send(self, owner: NodeId, frame: can.Message) -> None:
        self._require_owner(owner, "send")
        self.sent.append(frame)
        data = bytes(frame.data)
        self.timeline.record(owner, EventKind.LOG, "can-tx", id=f"{frame.arbitration_id:#05x}", dlc=frame.dlc)
        device = self.devices.get(frame.arbitration_id)
        if device is None or not data or data[0] != WAKE_UP:
            return
        payload = device.response()
        if payload is None:
            return
        self._response_seq += 1
        token = self._response_seq
        event_id = self.kernel.schedule_after(device.response_delay, self._device_responds,
                                              token, owner, device, payload)
        frames = -(-len(payload) // MAX_DLC)
        self._pending_responses[token] = _PendingResponse(event_id, owner, device.device_id, frames)

    def _device_responds(self, token: int, owner: NodeId, device: DeviceModel, payload: bytes) -> None:
        self._pending_responses.pop(token, None)
        frames = chunk_frames(device.device_id, payload)
        if self.ownership.owner != owner:
            self._discard(owner, device.device_id, len(frames))
            return
        waiter = self._waiter
        if waiter is not None and waiter.owner == owner:
            self._waiter = None
            self.kernel.cancel(waiter.timeout_event)
            self.timeline.record(owner, EventKind.DELIVER, "can-rx", id=f"{device.device_id:#05x}",
                                 frames=len(frames))
            waiter.on_complete(frames)
        else:
            self._inbox.extend(frames)

    def _discard(self, owner: NodeId, device_id: int, frames: int) -> None:
        self.timeline.record(owner, EventKind.LOG, "response-discarded", id=f"{device_id:#05x}", frames=frames)
        log_event("CAN_RESPONSE_DISCARDED", level=logging.WARNING, node=owner, device=device_id, frames=frames,
                  sim_time_us=self.kernel.now())

    def await_response(self, owner: NodeId, timeout: int, on_complete: ResponseCallback) -> None:
        """`on_complete` receives the response frames, or TIMEOUT at exactly now + timeout."""
        self._require_owner(owner, "await")
        if self._inbox:
            frames, self._inbox = self._inbox, []
            self.timeline.record(owner, EventKind.DELIVER, "can-rx", id=f"{frames[0].arbitration_id:#05x}",
                                 frames=len(frames))
            on_complete(frames)
            return
        timeout_event = self.kernel.schedule_after(timeout, self._timed_out, owner)
        self._waiter = _Waiter(owner, on_complete, timeout_event)

    def _timed_out(self, owner: NodeId) -> None:
        waiter = self._waiter
        if waiter is None or waiter.owner != owner:
            return
        self._waiter = None
        self.timeline.record(owner, EventKind.TIMEOUT, "can-response")
        waiter.on_complete(TIMEOUT)

    def release(self, owner: NodeId, reason: str = "") -> None:
        self._require_owner(owner, "release")
        for pending in self._pending_responses.values():
            if self.kernel.cancel(pending.event_id):
                self._discard(pending.owner, pending.device_id, pending.frames)
        self._pending_responses.clear()
        if self._inbox:
            self._discard(owner, self._inbox[0].arbitration_id, len(self._inbox))
            self._inbox = []
        if self._waiter is not None:
            self.kernel.cancel(self._waiter.timeout_event)
            self._waiter = None
        held = self.kernel.now() - self.ownership.acquired_at
        self.ownership = BusOwnership()
        if reason:
            self.timeline.record(owner, EventKind.RELEASE, reason, held_us=held)
        else:
            self.timeline.record(owner, EventKind.RELEASE, "can", held_us=held)

    def revoke(self, node: NodeId) -> bool:
        """Releases the bus on behalf of a finalized owner."""
        if self.ownership.owner != node:
            return False
        self.release(node, reason="revoked")
        log_event("CAN_OWNERSHIP_REVOKED", level=logging.WARNING, node=node, sim_time_us=self.kernel.now())
        return True

    def reset(self) -> None:
        for pending in self._pending_responses.values():
            self.kernel.cancel(pending.event_id)
        self._pending_responses.clear()
        if self._waiter is not None:
            self.kernel.cancel(self._waiter.timeout_event)
        self._waiter = None
        self._inbox = []
        self.ownership = BusOwnership()
        self.flags = None
