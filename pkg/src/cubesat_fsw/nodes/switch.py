import logging

from cubesat_fsw.core.message_bus import Envelope
from cubesat_fsw.core.messages import TaskFlags, TimingTick
from cubesat_fsw.core.timeline import EventKind
from cubesat_fsw.nodes.base import TASK_FLAGS_TOPIC, TIMING_TOPIC, FlightNode
from cubesat_fsw.nodes.registry import register_behavior
from cubesat_fsw.utils.logger import log_event


@register_behavior("can_switch")
class CanSwitchNode(FlightNode):
    """
    Time-division arbiter of the CAN bus.

    On every tick it checks the usage status of the bus. A free bus moves the grant to
    the next payload in the rotation; an owned bus blocks the tick and the same payload
    stays next in line, so no payload is ever skipped.
    """
    kind = "can_switch"

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        self.next_slot = 0
        self.blocked_ticks = 0

    @property
    def rotation(self):
        return self.ctx.can_bus.slots

    def on_configure(self) -> None:
        self.subscribe(TIMING_TOPIC, self.on_tick)

    def on_tick(self, envelope: Envelope) -> None:
        if not self.active:
            return
        tick = TimingTick.from_bytes(envelope.payload)
        slots = len(self.rotation)
        if slots == 0:
            return
        can_bus = self.ctx.can_bus
        if not can_bus.is_free:
            self.blocked_ticks += 1
            self.record(EventKind.LOG, "blocked", owner=can_bus.owner, cycle=tick.cycle)
            log_event("CAN_BUS_BLOCKED", level=logging.DEBUG, owner=can_bus.owner, cycle=tick.cycle,
                      sim_time_us=self.kernel.now())
            return
        slot = self.next_slot % slots
        generation = can_bus.flags.generation + 1 if can_bus.flags is not None else 1
        flags = TaskFlags.granting(slot, slots, generation, tick.cycle)
        can_bus.install_flags(flags)
        self.record(EventKind.GRANT, target=self.rotation[slot], generation=generation, cycle=tick.cycle)
        self.bus.publish(self.node_id, TASK_FLAGS_TOPIC, flags.to_bytes())
        self.next_slot = (slot + 1) % slots
