"""
Managed-node lifecycle: four primary states, six transition states.

A transition request moves the node into its transition state, runs the matching
callback exactly once, and completes after the node's `transition_duration` into the
target primary state. A failing callback routes through ErrorProcessing to Unconfigured
(recoverable) or Finalized. Requests that arrive while a transition is in progress are
queued FIFO and validated when their turn comes.
"""
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Deque, Dict, Optional, Set, Tuple

from cubesat_fsw.core.message_bus import MessageBus
from cubesat_fsw.core.messages import ParameterValue
from cubesat_fsw.core.sim_kernel import SimKernel
from cubesat_fsw.core.timeline import EventKind, Timeline
from cubesat_fsw.utils.error_handling import LifecycleTransitionError
from cubesat_fsw.utils.logger import log_event


class LifecycleState(str, Enum):
    UNCONFIGURED = "Unconfigured"
    INACTIVE = "Inactive"
    ACTIVE = "Active"
    FINALIZED = "Finalized"
    CONFIGURING = "Configuring"
    CLEANING_UP = "CleaningUp"
    SHUTTING_DOWN = "ShuttingDown"
    ACTIVATING = "Activating"
    DEACTIVATING = "Deactivating"
    ERROR_PROCESSING = "ErrorProcessing"

    @property
    def primary(self) -> bool:
        return self in PRIMARY_STATES


PRIMARY_STATES = frozenset({
    LifecycleState.UNCONFIGURED,
    LifecycleState.INACTIVE,
    LifecycleState.ACTIVE,
    LifecycleState.FINALIZED,
})


class TransitionKind(str, Enum):
    CONFIGURE = "configure"
    ACTIVATE = "activate"
    DEACTIVATE = "deactivate"
    CLEANUP = "cleanup"
    SHUTDOWN = "shutdown"


# (source, kind) -> (transition state, target)
TRANSITIONS: Dict[Tuple[LifecycleState, TransitionKind], Tuple[LifecycleState, LifecycleState]] = {
    (LifecycleState.UNCONFIGURED, TransitionKind.CONFIGURE): (LifecycleState.CONFIGURING, LifecycleState.INACTIVE),
    (LifecycleState.INACTIVE, TransitionKind.ACTIVATE): (LifecycleState.ACTIVATING, LifecycleState.ACTIVE),
    (LifecycleState.ACTIVE, TransitionKind.DEACTIVATE): (LifecycleState.DEACTIVATING, LifecycleState.INACTIVE),
    (LifecycleState.INACTIVE, TransitionKind.CLEANUP): (LifecycleState.CLEANING_UP, LifecycleState.UNCONFIGURED),
    (LifecycleState.UNCONFIGURED, TransitionKind.SHUTDOWN): (LifecycleState.SHUTTING_DOWN, LifecycleState.FINALIZED),
    (LifecycleState.INACTIVE, TransitionKind.SHUTDOWN): (LifecycleState.SHUTTING_DOWN, LifecycleState.FINALIZED),
    (LifecycleState.ACTIVE, TransitionKind.SHUTDOWN): (LifecycleState.SHUTTING_DOWN, LifecycleState.FINALIZED),
}


class TransitionFailure(Exception):
    """Raised by a transition callback; `recoverable` picks Unconfigured over Finalized."""

    def __init__(self, message: str = "", recoverable: bool = True):
        super().__init__(message)
        self.recoverable = recoverable


@dataclass(frozen=True)
class TransitionRequest:
    kind: TransitionKind
    requester: str
    issued_at: int


class LifecycleNode:
    """Base class of every flight node."""

    def __init__(self, node_id: str, kernel: SimKernel, bus: MessageBus, timeline: Timeline,
                 transition_duration: int = 0):
        self.node_id = node_id
        self.kernel = kernel
        self.bus = bus
        self.timeline = timeline
        self.transition_duration = transition_duration
        self.state = LifecycleState.UNCONFIGURED
        self.parameters: Dict[str, ParameterValue] = {}
        self._queue: Deque[TransitionRequest] = deque()
        self._in_transition = False
        self._timers: Set[int] = set()
        self._on_transition_done: Deque[Callable[[LifecycleState], None]] = deque()
        bus.register_node(node_id, self)

    # state

    @property
    def alive(self) -> bool:
        return self.state is not LifecycleState.FINALIZED

    @property
    def active(self) -> bool:
        return self.state is LifecycleState.ACTIVE

    def record(self, kind: EventKind, text: str = "", /, **fields) -> None:
        self.timeline.record(self.node_id, kind, text, **fields)

    # parameters

    def declare_parameter(self, key: str, default: ParameterValue) -> None:
        self.parameters.setdefault(key, default)

    def param(self, key: str) -> Any:
        return self.parameters[key]

    def on_parameter_set(self, key: str, old: ParameterValue, new: ParameterValue) -> None:
        pass

    # timers owned by the node; all cancelled when it finalizes

    def schedule(self, delay: int, action: Callable[..., Any], *args: Any) -> int:
        holder = {}

        def fire():
            self._timers.discard(holder["id"])
            if self.alive:
                action(*args)

        holder["id"] = self.kernel.schedule_after(delay, fire)
        self._timers.add(holder["id"])
        return holder["id"]

    def cancel_timer(self, event_id: Optional[int]) -> None:
        if event_id is not None and self.kernel.cancel(event_id):
            self._timers.discard(event_id)

    def cancel_timers(self) -> None:
        for event_id in list(self._timers):
            self.kernel.cancel(event_id)
        self._timers.clear()

    def guarded(self, callback: Callable[..., Any]) -> Callable[..., Any]:
        """Wraps a bus callback so it is dropped once this instance has finalized."""
        def wrapper(*args, **kwargs):
            if self.alive:
                return callback(*args, **kwargs)
            return None
        return wrapper

    # transition callbacks; subclasses override the ones they use

    def on_configure(self) -> None:
        pass

    def on_activate(self) -> None:
        pass

    def on_deactivate(self) -> None:
        pass

    def on_cleanup(self) -> None:
        pass

    def on_shutdown(self) -> None:
        pass

    def on_error(self, error: Exception) -> None:
        pass

    def release_resources(self) -> None:
        """Called once when the instance finalizes, by shutdown, error or crash."""
        pass

    _CALLBACKS = {
        TransitionKind.CONFIGURE: "on_configure",
        TransitionKind.ACTIVATE: "on_activate",
        TransitionKind.DEACTIVATE: "on_deactivate",
        TransitionKind.CLEANUP: "on_cleanup",
        TransitionKind.SHUTDOWN: "on_shutdown",
    }

    # transitions

    def request_transition(self, kind: TransitionKind, requester: str = "system",
                           on_done: Optional[Callable[[LifecycleState], None]] = None) -> LifecycleState:
        """
        Returns the resulting primary state, or the current transition state when the
        transition has a duration or is queued behind another one.
        """
        kind = TransitionKind(kind)
        if self.state is LifecycleState.FINALIZED:
            raise LifecycleTransitionError(f"{self.node_id} is finalized", code="terminal")
        request = TransitionRequest(kind, requester, self.kernel.now())
        if self._in_transition:
            self._queue.append(request)
            self._on_transition_done.append(on_done)
            return self.state
        if (self.state, kind) not in TRANSITIONS:
            log_event("LIFECYCLE_INVALID_TRANSITION", node=self.node_id, state=self.state.value,
                      kind=kind.value, sim_time_us=self.kernel.now())
            raise LifecycleTransitionError(f"{self.node_id}: {kind.value} from {self.state.value}")
        self._on_transition_done.append(on_done)
        return self._begin(request)

    def _set_state(self, new_state: LifecycleState, **fields) -> None:
        old_state = self.state
        self.state = new_state
        self.record(EventKind.STATE_CHANGE, f"lifecycle {old_state.value}->{new_state.value}", **fields)

    def _begin(self, request: TransitionRequest) -> LifecycleState:
        transition_state, target = TRANSITIONS[(self.state, request.kind)]
        self._in_transition = True
        self._set_state(transition_state, kind=request.kind.value, requester=request.requester)
        failure: Optional[Exception] = None
        try:
            getattr(self, self._CALLBACKS[request.kind])()
        except Exception as exc:
            failure = exc
            log_event("LIFECYCLE_CALLBACK_ERROR", node=self.node_id, kind=request.kind.value,
                      error=str(exc), error_type=type(exc).__name__, sim_time_us=self.kernel.now())
        if self.transition_duration > 0:
            self.kernel.schedule_after(self.transition_duration, self._complete, target, failure)
            return self.state
        self._complete(target, failure)
        return self.state

    def _complete(self, target: LifecycleState, failure: Optional[Exception]) -> None:
        if self.state is LifecycleState.FINALIZED:
            # crashed while transitioning
            return
        if failure is not None:
            self._set_state(LifecycleState.ERROR_PROCESSING, error=type(failure).__name__)
            recoverable = getattr(failure, "recoverable", True)
            try:
                self.on_error(failure)
            except Exception as exc:
                recoverable = False
                log_event("LIFECYCLE_ON_ERROR_FAILED", node=self.node_id, error=str(exc))
            target = LifecycleState.UNCONFIGURED if recoverable else LifecycleState.FINALIZED
        self._set_state(target)
        self._in_transition = False
        if target is LifecycleState.FINALIZED:
            self._teardown()
        done = self._on_transition_done.popleft() if self._on_transition_done else None
        if done is not None:
            done(target)
        self._drain_queue()

    def _drain_queue(self) -> None:
        while self._queue and not self._in_transition and self.alive:
            request = self._queue.popleft()
            if (self.state, request.kind) not in TRANSITIONS:
                self.record(EventKind.LOG, "transition-rejected", kind=request.kind.value,
                            state=self.state.value, requester=request.requester)
                done = self._on_transition_done.popleft() if self._on_transition_done else None
                if done is not None:
                    done(self.state)
                continue
            self._begin(request)

    def kill(self, reason: str = "killed") -> None:
        """Crash: jump to Finalized without running callbacks."""
        if not self.alive:
            return
        old_state = self.state
        self.state = LifecycleState.FINALIZED
        self.record(EventKind.STATE_CHANGE, f"lifecycle {old_state.value}->Finalized", reason=reason)
        log_event("NODE_KILLED", node=self.node_id, reason=reason, sim_time_us=self.kernel.now())
        self._queue.clear()
        self._on_transition_done.clear()
        self._in_transition = False
        self._teardown()

    def _teardown(self) -> None:
        self.cancel_timers()
        try:
            self.release_resources()
        finally:
            self.bus.unregister_node(self.node_id)

    # convenience used by the roster and supervisor

    def bring_up(self, requester: str = "system",
                 on_active: Optional[Callable[[], None]] = None) -> None:
        """configure then activate, whatever the transition durations are."""
        def activated(state: LifecycleState) -> None:
            if state is LifecycleState.ACTIVE and on_active is not None:
                on_active()

        def activate(state: LifecycleState) -> None:
            if state is LifecycleState.INACTIVE:
                self.request_transition(TransitionKind.ACTIVATE, requester, on_done=activated)

        if self.state is LifecycleState.UNCONFIGURED:
            self.request_transition(TransitionKind.CONFIGURE, requester, on_done=activate)
        elif self.state is LifecycleState.INACTIVE:
            self.request_transition(TransitionKind.ACTIVATE, requester, on_done=activated)

    def shut_down(self, requester: str = "system") -> None:
        if self.alive and self.state.primary and not self._in_transition:
            self.request_transition(TransitionKind.SHUTDOWN, requester)
        elif self.alive:
            self._queue.append(TransitionRequest(TransitionKind.SHUTDOWN, requester, self.kernel.now()))
            self._on_transition_done.append(None)
