import logging

from cubesat_fsw.config import Config
from cubesat_fsw.core.messages import TimingTick
from cubesat_fsw.core.timeline import EventKind
from cubesat_fsw.nodes.base import TIMING_TOPIC, FlightNode
from cubesat_fsw.nodes.registry import register_behavior
from cubesat_fsw.utils.logger import log_event


@register_behavior("timing")
class TimingNode(FlightNode):
    """Publishes a TimingTick every period and feeds the watchdog in the same dispatch."""
    kind = "timing"
    defaults = {"period_us": Config.TIMING_PERIOD_US}

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        self.cycle = 0
        self.started_at = 0
        self.feeding = True
        self._tick_event = None

    def on_activate(self) -> None:
        self.cycle = 0
        self.started_at = self.kernel.now()
        self._schedule_next()

    def on_deactivate(self) -> None:
        self.cancel_timer(self._tick_event)
        self._tick_event = None

    def _schedule_next(self) -> None:
        next_at = self.started_at + (self.cycle + 1) * int(self.param("period_us"))
        self._tick_event = self.schedule(next_at - self.kernel.now(), self.on_period)

    def on_period(self) -> None:
        if not self.active:
            log_event("TIMING_TICK_SKIPPED", level=logging.DEBUG, state=self.state.value,
                      sim_time_us=self.kernel.now())
            return
        self.cycle += 1
        tick = TimingTick(self.cycle, self.kernel.now())
        self.bus.publish(self.node_id, TIMING_TOPIC, tick.to_bytes())
        if self.ctx.watchdog is not None:
            if self.feeding:
                self.ctx.watchdog.feed(self.node_id)
            else:
                self.record(EventKind.LOG, "feed-suppressed", cycle=self.cycle)
        self._schedule_next()

    def stop_feeding(self) -> None:
        self.feeding = False
        log_event("WATCHDOG_FEEDING_STOPPED", level=logging.WARNING, node=self.node_id,
                  sim_time_us=self.kernel.now())
