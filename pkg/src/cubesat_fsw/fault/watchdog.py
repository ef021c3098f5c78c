import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

from cubesat_fsw.core.sim_kernel import SimKernel
from cubesat_fsw.core.timeline import EventKind, Timeline
from cubesat_fsw.utils.logger import log_event

WATCHDOG_NODE = "watchdog"


class WatchdogCheck(str, Enum):
    OK = "ok"
    REBOOT_TRIGGERED = "reboot_triggered"


@dataclass
class WatchdogState:
    last_fed: int
    timeout: int


class Watchdog:
    """
    Hardware watchdog analogue fed by the timing node.

    A check that finds now - last_fed > timeout triggers one system reboot and restarts
    the starvation window from the reboot time.
    """

    def __init__(self, kernel: SimKernel, timeline: Timeline, timeout: int, check_period: int,
                 on_starved: Callable[[], None]):
        self.kernel = kernel
        self.timeline = timeline
        self.state = WatchdogState(last_fed=kernel.now(), timeout=timeout)
        self.check_period = check_period
        self.on_starved = on_starved
        self.enabled = True
        self.reboots = 0
        self._check_event: Optional[int] = None

    def start(self) -> None:
        self.state.last_fed = self.kernel.now()
        self._schedule_check()

    def stop(self) -> None:
        self.enabled = False
        self.kernel.cancel(self._check_event)

    def _schedule_check(self) -> None:
        self._check_event = self.kernel.schedule_after(self.check_period, self._periodic_check)

    def _periodic_check(self) -> None:
        if not self.enabled:
            return
        self.check(self.kernel.now())
        self._schedule_check()

    def feed(self, source: str = "") -> None:
        self.state.last_fed = self.kernel.now()
        self.timeline.record(WATCHDOG_NODE, EventKind.LOG, "feed", source=source)

    def check(self, now: int) -> WatchdogCheck:
        if not self.enabled or now - self.state.last_fed <= self.state.timeout:
            return WatchdogCheck.OK
        starved_for = now - self.state.last_fed
        self.reboots += 1
        self.timeline.record(WATCHDOG_NODE, EventKind.REBOOT, last_fed=self.state.last_fed,
                             timeout=self.state.timeout, starved_us=starved_for)
        log_event("SYSTEM_REBOOT", level=logging.ERROR, last_fed_us=self.state.last_fed,
                  timeout_us=self.state.timeout, sim_time_us=now)
        self.state.last_fed = now
        self.on_starved()
        return WatchdogCheck.REBOOT_TRIGGERED
