import logging
from collections import deque
from typing import Deque, Dict

from cubesat_fsw.config import Config
from cubesat_fsw.core.message_bus import Envelope
from cubesat_fsw.core.messages import MaintenanceCommand, MaintenanceKind, Telecommand
from cubesat_fsw.core.timeline import EventKind
from cubesat_fsw.nodes.base import MAINTENANCE_TOPIC, TELECOMMAND_TOPIC, FlightNode
from cubesat_fsw.nodes.registry import behavior_kind, register_behavior
from cubesat_fsw.utils.error_handling import CodecError, ParameterError, UnknownBehaviorError
from cubesat_fsw.utils.logger import log_event


@register_behavior("maintenance")
class MaintenanceNode(FlightNode):
    """
    Applies maintenance commands without disturbing the rest of the system.

    Parameter commands are remote parameter sets; the target keeps running. Replace
    commands swap a node for a new behaviour: everything is validated before the old
    node is touched, and telecommands meant for it are held here until the
    replacement is Active.
    """
    kind = "maintenance"
    defaults = {"build_delay_us": Config.BUILD_DELAY_US}

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        self.held: Dict[str, Deque[Telecommand]] = {}

    def on_configure(self) -> None:
        self.subscribe(MAINTENANCE_TOPIC, self.on_maintenance)
        self.subscribe(TELECOMMAND_TOPIC, self.on_telecommand)

    def on_maintenance(self, envelope: Envelope) -> None:
        if not self.active:
            return
        try:
            command = MaintenanceCommand.from_bytes(envelope.payload)
        except CodecError as exc:
            self._fail("malformed", reason=exc.code)
            return
        if command.kind is MaintenanceKind.PARAMETER:
            self._set_parameter(command)
        else:
            self._replace(command)

    def _set_parameter(self, command: MaintenanceCommand) -> None:
        try:
            self.bus.set_parameter(self.node_id, command.node, command.key, command.value)
        except ParameterError as exc:
            self._fail(exc.code, target=command.node, key=command.key)

    def _replace(self, command: MaintenanceCommand) -> None:
        system = self.ctx.system
        target = command.node
        if not system.has_node(target):
            self._fail("unknown-node", target=target)
            return
        try:
            new_kind = behavior_kind(command.behavior)
        except UnknownBehaviorError:
            self._fail("unknown-behavior", target=target, behavior=command.behavior)
            return
        if new_kind != behavior_kind(system.spec_of(target).behavior):
            self._fail("behavior-kind-mismatch", target=target, behavior=command.behavior)
            return
        if target in self.held or system.is_pending(target):
            self._fail("replacement-in-progress", target=target)
            return
        self.held[target] = deque()
        self.record(EventKind.LOG, "replace-start", target=target, behavior=command.behavior)
        log_event("MAINTENANCE_REPLACE_START", target=target, behavior=command.behavior,
                  sim_time_us=self.kernel.now())
        system.replace_node(target, command.behavior, int(self.param("build_delay_us")),
                            requester=self.node_id, on_active=self.guarded(self._replacement_active))

    def _replacement_active(self, target: str) -> None:
        held = self.held.pop(target, deque())
        self.record(EventKind.LOG, "replace-done", target=target, replayed=len(held))
        log_event("MAINTENANCE_REPLACE_DONE", target=target, replayed=len(held), sim_time_us=self.kernel.now())
        for command in held:
            self.bus.publish(self.node_id, TELECOMMAND_TOPIC, command.to_bytes())

    def on_telecommand(self, envelope: Envelope) -> None:
        if not self.held or envelope.publisher == self.node_id:
            return
        try:
            command = Telecommand.from_bytes(envelope.payload)
        except CodecError:
            return
        for target, held in self.held.items():
            if self.ctx.system.payload_id_of(target) == command.target:
                held.append(command)
                self.record(EventKind.LOG, "telecommand-held", target=target, held=len(held))

    def _fail(self, reason: str, **fields) -> None:
        self.record(EventKind.LOG, "maintenance-failed", reason=reason, **fields)
        log_event("MAINTENANCE_FAILED", level=logging.ERROR, reason=reason, sim_time_us=self.kernel.now(), **fields)
