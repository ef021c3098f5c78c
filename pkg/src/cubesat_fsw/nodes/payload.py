"""
Payload nodes: one CAN device each, driven by the task-flag schedule.

A granted cycle runs off -> occupying_can -> data_processing, then waits in
other_async_commands for the liveness probe of its downstream neighbour and returns to
off. Telecommands are queued and executed at the start of the next bus ownership.
"""
import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Deque, Optional, Tuple

from cubesat_fsw.canbus.can_sim import (
    COMMAND,
    WAKE_UP,
    AcquireResult,
    chunk_frames,
    device_id_for,
    make_frame,
    reassemble,
)
from cubesat_fsw.codec.telemetry_codec import CRC_SIZE, crc_ok
from cubesat_fsw.config import Config
from cubesat_fsw.core.message_bus import TIMEOUT, Envelope, ServiceRequest
from cubesat_fsw.core.messages import RecordStatus, TaskFlags, Telecommand, TelemetryRecord
from cubesat_fsw.core.timeline import EventKind
from cubesat_fsw.nodes.base import (
    TASK_FLAGS_TOPIC,
    TELECOMMAND_TOPIC,
    FlightNode,
    liveness_service,
    telemetry_topic,
)
from cubesat_fsw.nodes.registry import register_behavior
from cubesat_fsw.utils.error_handling import CanBusError, CodecError, LifecycleTransitionError
from cubesat_fsw.utils.logger import log_event

ALIVE = b"\x01"


class RunState(str, Enum):
    OFF = "off"
    OCCUPYING_CAN = "occupying_can"
    DATA_PROCESSING = "data_processing"
    OTHER_ASYNC_COMMANDS = "other_async_commands"


RUN_EDGES = {
    RunState.OFF: {RunState.OCCUPYING_CAN, RunState.OTHER_ASYNC_COMMANDS},
    RunState.OCCUPYING_CAN: {RunState.DATA_PROCESSING},
    RunState.DATA_PROCESSING: {RunState.OFF, RunState.OTHER_ASYNC_COMMANDS},
    # back to data_processing when a command interrupted unfinished processing
    RunState.OTHER_ASYNC_COMMANDS: {RunState.OFF, RunState.DATA_PROCESSING},
}


@dataclass(frozen=True)
class PendingCommand:
    target: int
    command: bytes
    received_cycle: int
    received_at: int


@register_behavior("payload", "standard")
class PayloadNode(FlightNode):
    kind = "payload"
    can_capable = True
    defaults = {
        "payload_id": 1,
        "device_id": 0,
        "poll_delay_ms": Config.POLL_DELAY_MS,
        "response_timeout_us": Config.RESPONSE_TIMEOUT_US,
        "processing_delay_us": Config.PROCESSING_DELAY_US,
        "command_handling_us": Config.COMMAND_HANDLING_US,
        "can_enabled": True,
    }

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        self.run_state = RunState.OFF
        self.commands: Deque[PendingCommand] = deque()
        self.last_cycle = 0
        self.cycle = 0
        self._result: Optional[Tuple[RecordStatus, bytes]] = None
        self._processing_done = False
        self._handling_command = False
        self._probing = False
        self._extra_hold = 0
        self._drop_probes = 0

    @property
    def payload_id(self) -> int:
        return int(self.param("payload_id"))

    @property
    def device_id(self) -> int:
        return int(self.param("device_id")) or device_id_for(self.payload_id)

    @property
    def can_usable(self) -> bool:
        return self.can_capable and bool(self.param("can_enabled"))

    # lifecycle

    def on_configure(self) -> None:
        self.subscribe(TASK_FLAGS_TOPIC, self.on_flags)
        self.subscribe(TELECOMMAND_TOPIC, self.on_telecommand)

    def on_activate(self) -> None:
        self.bus.register_service(self.node_id, liveness_service(self.node_id), self.guarded(self.on_probe))

    def on_deactivate(self) -> None:
        self.bus.unregister_service(liveness_service(self.node_id))
        self.cancel_timers()
        self.ctx.can_bus.revoke(self.node_id)
        if self.run_state is not RunState.OFF:
            self.record(EventKind.STATE_CHANGE, f"run {self.run_state.value}->off", reason="deactivated")
            self.run_state = RunState.OFF
        self._handling_command = self._probing = False

    def release_resources(self) -> None:
        self.ctx.can_bus.revoke(self.node_id)
        if self.commands:
            self.record(EventKind.LOG, "commands-dropped", count=len(self.commands))
            log_event("PAYLOAD_COMMANDS_DROPPED", level=logging.WARNING, node=self.node_id,
                      count=len(self.commands), sim_time_us=self.kernel.now())
            self.commands.clear()

    # run state

    def set_run_state(self, new_state: RunState, **fields) -> None:
        if new_state not in RUN_EDGES[self.run_state]:
            raise LifecycleTransitionError(f"{self.node_id}: run {self.run_state.value}->{new_state.value}",
                                           code="invalid-run-transition")
        old_state = self.run_state
        self.run_state = new_state
        self.record(EventKind.STATE_CHANGE, f"run {old_state.value}->{new_state.value}", **fields)

    # acquisition cycle

    def on_flags(self, envelope: Envelope) -> None:
        if not self.active:
            return
        flags = TaskFlags.from_bytes(envelope.payload)
        self.last_cycle = flags.cycle
        slots = self.ctx.can_bus.slots
        if self.node_id not in slots or flags.active_index != slots.index(self.node_id):
            return
        if self.run_state is not RunState.OFF:
            self.record(EventKind.LOG, "grant-missed", state=self.run_state.value, cycle=flags.cycle)
            log_event("PAYLOAD_GRANT_MISSED", level=logging.WARNING, node=self.node_id,
                      state=self.run_state.value, cycle=flags.cycle)
            return
        self.cycle = flags.cycle
        if not self.can_usable:
            self.record(EventKind.LOG, "can-unavailable", cycle=flags.cycle)
            self._enter_probe_phase()
            return
        try:
            result = self.ctx.can_bus.acquire(self.node_id)
        except CanBusError as exc:
            log_event("PAYLOAD_ACQUIRE_FAILED", level=logging.WARNING, node=self.node_id, error=str(exc))
            return
        if result is AcquireResult.BUSY:
            return
        self.set_run_state(RunState.OCCUPYING_CAN, cycle=flags.cycle)
        self._execute_pending()
        self.schedule(int(self.param("poll_delay_ms")) * 1000, self._wake_device)

    def _execute_pending(self) -> None:
        while self.commands:
            pending = self.commands.popleft()
            frames = chunk_frames(self.device_id, bytes([COMMAND]) + pending.command)
            for frame in frames:
                self.ctx.can_bus.send(self.node_id, frame)
            self.record(EventKind.LOG, "command-executed", received_cycle=pending.received_cycle,
                        cycle=self.cycle, size=len(pending.command), frames=len(frames))
            log_event("PAYLOAD_COMMAND_EXECUTED", level=logging.DEBUG, node=self.node_id,
                      received_cycle=pending.received_cycle, cycle=self.cycle)

    def _wake_device(self) -> None:
        can_bus = self.ctx.can_bus
        if can_bus.owner != self.node_id:
            return
        can_bus.send(self.node_id, make_frame(self.device_id, bytes([WAKE_UP])))
        can_bus.await_response(self.node_id, int(self.param("response_timeout_us")),
                               self.guarded(self._on_response))

    def _on_response(self, outcome) -> None:
        if outcome is TIMEOUT:
            self._result = (RecordStatus.NO_RESPONSE, b"")
            log_event("PAYLOAD_DEVICE_TIMEOUT", level=logging.WARNING, node=self.node_id, cycle=self.cycle)
        else:
            payload = reassemble(outcome)
            if crc_ok(payload):
                self._result = (RecordStatus.OK, payload[:-CRC_SIZE])
            else:
                self._result = (RecordStatus.GARBLED, b"")
                self.record(EventKind.LOG, "device-garbled", cycle=self.cycle, size=len(payload))
                log_event("PAYLOAD_DEVICE_GARBLED", level=logging.WARNING, node=self.node_id, cycle=self.cycle)
        hold, self._extra_hold = self._extra_hold, 0
        if hold:
            self.record(EventKind.LOG, "bus-overrun", extra_us=hold, cycle=self.cycle)
            self.schedule(hold, self._release_bus)
        else:
            self._release_bus()

    def _release_bus(self) -> None:
        if self.ctx.can_bus.owner == self.node_id:
            self.ctx.can_bus.release(self.node_id)
        self.set_run_state(RunState.DATA_PROCESSING, cycle=self.cycle)
        self._processing_done = False
        self.schedule(int(self.param("processing_delay_us")), self._processing_complete)

    def _processing_complete(self) -> None:
        self._processing_done = True
        if self.run_state is RunState.DATA_PROCESSING:
            self._finish_cycle()

    def _finish_cycle(self) -> None:
        status, data = self._result or (RecordStatus.NO_RESPONSE, b"")
        record = TelemetryRecord(self.payload_id, self.cycle, data, self.kernel.now(), status)
        self.bus.publish(self.node_id, telemetry_topic(self.node_id), record.to_bytes())
        self._result = None
        self._processing_done = False
        self._enter_probe_phase()

    # liveness

    def _enter_probe_phase(self) -> None:
        ring = self.ctx.ring
        if ring is None or not ring.probes_from(self.node_id):
            if self.run_state is not RunState.OFF:
                self.set_run_state(RunState.OFF, cycle=self.cycle)
            return
        self.set_run_state(RunState.OTHER_ASYNC_COMMANDS, cycle=self.cycle, reason="probe")
        self._probing = True
        ring.probe_cycle(self.node_id, on_done=self.guarded(self._probe_finished))

    def _probe_finished(self, _outcome) -> None:
        self._probing = False
        if self.run_state is RunState.OTHER_ASYNC_COMMANDS and not self._handling_command:
            self.set_run_state(RunState.OFF, cycle=self.cycle)

    def on_probe(self, request: ServiceRequest) -> Optional[bytes]:
        if not self.active:
            return None
        if self._drop_probes > 0:
            self._drop_probes -= 1
            self.record(EventKind.LOG, "probe-dropped", prober=request.sender, remaining=self._drop_probes)
            return None
        return ALIVE

    # telecommands

    def on_telecommand(self, envelope: Envelope) -> None:
        if not self.active:
            return
        try:
            command = Telecommand.from_bytes(envelope.payload)
        except CodecError as exc:
            self.record(EventKind.LOG, "telecommand-rejected", reason=exc.code)
            log_event("PAYLOAD_TELECOMMAND_REJECTED", level=logging.WARNING, node=self.node_id, error=str(exc))
            return
        if command.target != self.payload_id:
            return
        self.commands.append(PendingCommand(command.target, command.command, self.last_cycle, self.kernel.now()))
        self.record(EventKind.LOG, "command-queued", cycle=self.last_cycle, queued=len(self.commands))
        if self._handling_command or self.run_state not in (RunState.OFF, RunState.DATA_PROCESSING):
            return
        resume = self.run_state
        self.set_run_state(RunState.OTHER_ASYNC_COMMANDS, cycle=self.last_cycle, reason="command")
        self._handling_command = True
        self.schedule(int(self.param("command_handling_us")), self._command_handled, resume)

    def _command_handled(self, resume: RunState) -> None:
        self._handling_command = False
        if self.run_state is not RunState.OTHER_ASYNC_COMMANDS or self._probing:
            return
        if resume is RunState.DATA_PROCESSING:
            self.set_run_state(RunState.DATA_PROCESSING, cycle=self.cycle)
            if self._processing_done:
                self._finish_cycle()
        else:
            self.set_run_state(RunState.OFF, cycle=self.cycle)

    # fault injection

    def delay_bus_usage(self, extra_us: int) -> None:
        self._extra_hold += int(extra_us)

    def drop_probes(self, count: int) -> None:
        self._drop_probes += int(count)


@register_behavior("can_disabled")
class CanDisabledPayloadNode(PayloadNode):
    """Build without CAN support: takes its grants but never touches the bus."""
    can_capable = False


@register_behavior("can_enabled_v2")
class CanEnabledPayloadNode(PayloadNode):
    """Rebuilt payload with CAN support, delivered through node maintenance."""
    can_capable = True
