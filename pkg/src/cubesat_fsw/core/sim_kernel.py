"""
Discrete-event simulation kernel.

All time is integer microseconds. Events fire in (fire_at, seq) order where seq is a
global counter assigned at scheduling time, so two events due at the same instant fire
in the order they were scheduled.

`SimKernel` is the deterministic mode: a single-threaded event loop over a heap.
`WallClockKernel` keeps the same API but maps fire times onto real time; it accepts
schedule calls from any thread and dispatches from the thread running `run_until`.
Determinism is not guaranteed in wall-clock mode.
"""
import heapq
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple

from cubesat_fsw.utils.error_handling import SchedulingError

EventId = int


class ClockMode(str, Enum):
    DETERMINISTIC = "deterministic"
    WALL_CLOCK = "wall_clock"


@dataclass
class Event:
    event_id: EventId
    fire_at: int
    seq: int
    action: Callable[..., Any]
    args: Tuple[Any, ...] = field(default_factory=tuple)
    cancelled: bool = False


class SimKernel:
    mode = ClockMode.DETERMINISTIC

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._now = 0
        self._seq = 0
        self._queue: List[Tuple[int, int, Event]] = []
        self._pending: Dict[EventId, Event] = {}
        self._closed = False
        self._lock = threading.RLock()

    def now(self) -> int:
        return self._now

    @property
    def closed(self) -> bool:
        return self._closed

    @property
    def pending_count(self) -> int:
        return len(self._pending)

    def schedule_after(self, delay: int, action: Callable[..., Any], *args: Any) -> EventId:
        if delay < 0:
            raise SchedulingError(f"negative delay {delay}", code="negative-delay")
        return self.schedule_at(self.now() + delay, action, *args)

    def schedule_at(self, fire_at: int, action: Callable[..., Any], *args: Any) -> EventId:
        with self._lock:
            if self._closed:
                raise SchedulingError("run has ended")
            if fire_at < self._now:
                raise SchedulingError(f"fire_at {fire_at} is before now {self._now}", code="in-the-past")
            self._seq += 1
            event = Event(event_id=self._seq, fire_at=int(fire_at), seq=self._seq, action=action, args=args)
            heapq.heappush(self._queue, (event.fire_at, event.seq, event))
            self._pending[event.event_id] = event
            return event.event_id

    def cancel(self, event_id: Optional[EventId]) -> bool:
        """True iff the event was still pending; it will never fire."""
        if event_id is None:
            return False
        with self._lock:
            event = self._pending.pop(event_id, None)
            if event is None:
                return False
            event.cancelled = True
            return True

    def _pop_due(self, limit: int) -> Optional[Event]:
        with self._lock:
            while self._queue and self._queue[0][0] <= limit:
                _, _, event = heapq.heappop(self._queue)
                if event.cancelled:
                    continue
                del self._pending[event.event_id]
                return event
            return None

    def _next_fire_at(self) -> Optional[int]:
        with self._lock:
            while self._queue and self._queue[0][2].cancelled:
                heapq.heappop(self._queue)
            return self._queue[0][0] if self._queue else None

    def run_until(self, t: int) -> int:
        """Fire every event with fire_at <= t, then advance the clock to t."""
        if t < self._now:
            raise SchedulingError(f"run_until {t} is before now {self._now}", code="in-the-past")
        fired = 0
        while True:
            event = self._pop_due(t)
            if event is None:
                break
            self._now = event.fire_at
            event.action(*event.args)
            fired += 1
        self._now = t
        return fired

    def close(self) -> None:
        with self._lock:
            self._closed = True
            self._pending.clear()
            self._queue.clear()


class WallClockKernel(SimKernel):
    """Same event API against real time; now() is microseconds since construction."""

    mode = ClockMode.WALL_CLOCK

    def __init__(self, seed: int = 0):
        super().__init__(seed)
        self._origin_ns = time.perf_counter_ns()
        self._wakeup = threading.Condition(self._lock)

    def now(self) -> int:
        return (time.perf_counter_ns() - self._origin_ns) // 1000

    def schedule_at(self, fire_at: int, action: Callable[..., Any], *args: Any) -> EventId:
        # self._now stays 0 in this mode, so past-time checks never reject a late call
        with self._wakeup:
            event_id = super().schedule_at(fire_at, action, *args)
            self._wakeup.notify()
            return event_id

    def run_until(self, t: int) -> int:
        fired = 0
        while not self._closed:
            now = self.now()
            event = self._pop_due(min(now, t))
            if event is not None:
                event.action(*event.args)
                fired += 1
                continue
            if now >= t:
                break
            with self._wakeup:
                next_at = self._next_fire_at()
                deadline = t if next_at is None else min(next_at, t)
                self._wakeup.wait(timeout=max(deadline - self.now(), 0) / 1e6)
        return fired
