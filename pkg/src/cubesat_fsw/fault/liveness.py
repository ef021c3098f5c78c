"""
Cyclic restart ring: each payload node probes one downstream neighbour.

A probe is a liveness service call with `probe_timeout`. A response resets the
consecutive-timeout counter; a timeout increments it, and the increment that reaches
`threshold` hands the downstream node to the supervisor and resets the counter.
"""
import logging
from collections import defaultdict
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from cubesat_fsw.core.message_bus import TIMEOUT, MessageBus
from cubesat_fsw.core.timeline import EventKind, Timeline
from cubesat_fsw.nodes.base import liveness_service
from cubesat_fsw.utils.logger import log_event

PROBE_REQUEST = b"?"


class ProbeOutcome(str, Enum):
    ALIVE = "alive"
    COUNTED_TIMEOUT = "counted_timeout"
    RESTART_ISSUED = "restart_issued"
    RESTART_SUPPRESSED = "restart_suppressed"


def default_ring(payloads: Sequence[str]) -> List[str]:
    """First payload, then the rest in reverse: 1 -> 3 -> 2 -> 1 for three payloads."""
    payloads = list(payloads)
    if len(payloads) < 2:
        return payloads
    return [payloads[0]] + payloads[:0:-1]


class LivenessRing:
    def __init__(self, bus: MessageBus, timeline: Timeline, order: Sequence[str], probe_timeout: int,
                 threshold: int, restart: Callable[[str, str], bool]):
        if threshold < 1:
            raise ValueError("threshold must be at least 1")
        self.bus = bus
        self.timeline = timeline
        self.order = list(order)
        self.probe_timeout = probe_timeout
        self.threshold = threshold
        self.restart = restart
        self.counters: Dict[Tuple[str, str], int] = defaultdict(int)

    def probes_from(self, prober: str) -> bool:
        return len(self.order) > 1 and prober in self.order

    def downstream_of(self, prober: str) -> str:
        index = self.order.index(prober)
        return self.order[(index + 1) % len(self.order)]

    def counter(self, prober: str, target: str) -> int:
        return self.counters[(prober, target)]

    def reset(self) -> None:
        self.counters.clear()

    def probe_cycle(self, prober: str, on_done: Optional[Callable[[ProbeOutcome], None]] = None) -> None:
        target = self.downstream_of(prober)
        self.timeline.record(prober, EventKind.PROBE, target=target)

        def completed(outcome) -> None:
            result = self._count(prober, target, outcome is TIMEOUT)
            if on_done is not None:
                on_done(result)

        self.bus.call_service(prober, liveness_service(target), PROBE_REQUEST, self.probe_timeout, completed)

    def _count(self, prober: str, target: str, timed_out: bool) -> ProbeOutcome:
        key = (prober, target)
        if not timed_out:
            self.counters[key] = 0
            return ProbeOutcome.ALIVE
        self.counters[key] += 1
        count = self.counters[key]
        self.timeline.record(prober, EventKind.TIMEOUT, "probe", target=target, count=count)
        log_event("PROBE_TIMEOUT", level=logging.WARNING, prober=prober, target=target, count=count)
        if count < self.threshold:
            return ProbeOutcome.COUNTED_TIMEOUT
        self.counters[key] = 0
        if self.restart(target, prober):
            return ProbeOutcome.RESTART_ISSUED
        self.timeline.record(prober, EventKind.LOG, "restart-suppressed", target=target, count=count)
        log_event("PROBE_RESTART_SUPPRESSED", level=logging.WARNING, prober=prober, target=target, count=count)
        return ProbeOutcome.RESTART_SUPPRESSED
