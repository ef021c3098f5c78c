import logging
from typing import Set

from cubesat_fsw.core.sim_kernel import SimKernel
from cubesat_fsw.core.timeline import EventKind, Timeline
from cubesat_fsw.utils.logger import log_event


class Supervisor:
    """Restarts one node on behalf of a prober: shut the old instance down, respawn after a delay."""

    def __init__(self, kernel: SimKernel, timeline: Timeline, system, respawn_delay: int):
        self.kernel = kernel
        self.timeline = timeline
        self.system = system
        self.respawn_delay = respawn_delay
        self.pending: Set[str] = set()
        self.restarts = 0

    def restart(self, target: str, prober: str = "supervisor") -> bool:
        if not self.system.has_node(target):
            self.timeline.record(prober, EventKind.LOG, "restart-unknown-target", target=target)
            log_event("RESTART_UNKNOWN_TARGET", level=logging.ERROR, prober=prober, target=target)
            return False
        if target in self.pending or self.system.is_pending(target):
            self.timeline.record(prober, EventKind.LOG, "restart-pending", target=target)
            return False
        self.restarts += 1
        self.pending.add(target)
        self.timeline.record(prober, EventKind.RESTART, prober=prober, target=target)
        log_event("NODE_RESTART", level=logging.WARNING, prober=prober, target=target,
                  sim_time_us=self.kernel.now())
        self.system.retire(target, requester=prober)
        self.kernel.schedule_after(self.respawn_delay, self._respawn, target, prober)
        return True

    def _respawn(self, target: str, prober: str) -> None:
        if target not in self.pending:
            return
        self.pending.discard(target)
        self.system.spawn(target, requester=prober)

    def reset(self) -> None:
        self.pending.clear()
