"""
In-process message bus: topics, services, actions and remote parameters.

Delivery is owned by the bus so runs are reproducible: every delivery is a kernel event
scheduled at publish_time + base_delay + jitter, clamped so that a (publisher,
subscriber, topic) channel never delivers out of publish order. Handlers run on the
kernel's dispatch, one at a time.
"""
import itertools
import random
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Protocol, Tuple, Union

from cubesat_fsw.core.messages import ParameterValue
from cubesat_fsw.core.sim_kernel import SimKernel
from cubesat_fsw.core.timeline import EventKind, Timeline
from cubesat_fsw.utils.error_handling import BusError, ParameterError
from cubesat_fsw.utils.logger import log_event

NodeId = str
SubscriptionId = int


class TopicName(str):
    """Non-empty '/'-namespaced name without whitespace or empty segments."""

    def __new__(cls, name: str):
        if isinstance(name, TopicName):
            return name
        if not name or any(ch.isspace() for ch in name):
            raise ValueError(f"invalid topic name {name!r}")
        segments = name.strip("/").split("/") if name.startswith("/") else name.split("/")
        if not all(segments):
            raise ValueError(f"topic name {name!r} has an empty segment")
        return super().__new__(cls, name)


class _Timeout:
    def __repr__(self) -> str:
        return "TIMEOUT"

    def __bool__(self) -> bool:
        return False


TIMEOUT = _Timeout()


@dataclass(frozen=True)
class Envelope:
    topic: TopicName
    publisher: NodeId
    seq: int
    publish_time: int
    payload: bytes
    delivered_time: int = 0


@dataclass
class DeliveryModel:
    base_delay: int = 0
    jitter_bound: int = 0
    seed: int = 0
    _rng: random.Random = field(init=False, repr=False)

    def __post_init__(self):
        if self.base_delay < 0 or self.jitter_bound < 0:
            raise ValueError("base_delay and jitter_bound must be >= 0")
        # MT19937 via random.Random; one draw per delivery, in publish order
        self._rng = random.Random(self.seed)

    def draw_delay(self) -> int:
        if self.jitter_bound == 0:
            return self.base_delay
        return self.base_delay + self._rng.randint(0, self.jitter_bound)


@dataclass
class Subscription:
    subscription_id: SubscriptionId
    subscriber: NodeId
    topic: TopicName
    handler: Callable[[Envelope], None]
    active: bool = True


@dataclass(frozen=True)
class ServiceRequest:
    service: TopicName
    request_id: int
    sender: NodeId
    payload: bytes
    deadline: int


@dataclass(frozen=True)
class ServiceResponse:
    service: TopicName
    request_id: int
    responder: NodeId
    payload: bytes
    responded_at: int


ServiceOutcome = Union[ServiceResponse, _Timeout]


@dataclass
class _ServiceServer:
    server: NodeId
    service: TopicName
    handler: Callable[[ServiceRequest], Optional[bytes]]
    response_delay: int = 0
    active: bool = True


@dataclass
class _PendingCall:
    request: ServiceRequest
    on_complete: Callable[[ServiceOutcome], None]
    timeout_event: Optional[int] = None
    done: bool = False


class ActionStatus(str, Enum):
    ACCEPTED = "accepted"
    EXECUTING = "executing"
    SUCCEEDED = "succeeded"
    ABORTED = "aborted"


@dataclass
class ActionObserver:
    on_status: Optional[Callable[["ActionExchange"], None]] = None
    on_feedback: Optional[Callable[["ActionExchange", bytes], None]] = None
    on_result: Optional[Callable[["ActionExchange"], None]] = None


_ACTION_EDGES = {
    None: {ActionStatus.ACCEPTED, ActionStatus.ABORTED},
    ActionStatus.ACCEPTED: {ActionStatus.EXECUTING, ActionStatus.ABORTED},
    ActionStatus.EXECUTING: {ActionStatus.SUCCEEDED, ActionStatus.ABORTED},
    ActionStatus.SUCCEEDED: set(),
    ActionStatus.ABORTED: set(),
}


@dataclass
class ActionExchange:
    goal_id: int
    action: TopicName
    client: NodeId
    goal: bytes
    feedback: List[bytes] = field(default_factory=list)
    result: Optional[bytes] = None
    status: Optional[ActionStatus] = None
    reason: str = ""
    observer: ActionObserver = field(default_factory=ActionObserver, repr=False)

    @property
    def finished(self) -> bool:
        return self.status in (ActionStatus.SUCCEEDED, ActionStatus.ABORTED)

    def advance(self, status: ActionStatus) -> None:
        if status not in _ACTION_EDGES[self.status]:
            raise BusError(f"goal {self.goal_id}: {self.status} -> {status}", code="invalid-goal-transition")
        self.status = status


class GoalHandle:
    """Server-side view of one goal."""

    def __init__(self, bus: "MessageBus", server: NodeId, exchange: ActionExchange):
        self._bus = bus
        self.server = server
        self.exchange = exchange

    @property
    def goal(self) -> bytes:
        return self.exchange.goal

    @property
    def goal_id(self) -> int:
        return self.exchange.goal_id

    @property
    def active(self) -> bool:
        return not self.exchange.finished

    def publish_feedback(self, data: bytes) -> None:
        if self.exchange.status is not ActionStatus.EXECUTING:
            raise BusError(f"goal {self.goal_id} is {self.exchange.status}", code="not-executing")
        self.exchange.feedback.append(data)
        self._bus._notify_client(self.server, self.exchange, "feedback", data)

    def succeed(self, result: bytes) -> None:
        self._bus._finish_goal(self.server, self.exchange, ActionStatus.SUCCEEDED, result)

    def abort(self, reason: str, result: bytes = b"") -> None:
        self._bus._finish_goal(self.server, self.exchange, ActionStatus.ABORTED, result, reason)


@dataclass
class _ActionServer:
    server: NodeId
    action: TopicName
    execute: Callable[[GoalHandle], None]
    in_flight: Dict[int, GoalHandle] = field(default_factory=dict)
    active: bool = True


class ParameterHost(Protocol):
    parameters: Dict[str, ParameterValue]

    def on_parameter_set(self, key: str, old: ParameterValue, new: ParameterValue) -> None:
        ...


class MessageBus:
    def __init__(self, kernel: SimKernel, timeline: Optional[Timeline] = None,
                 delivery: Optional[DeliveryModel] = None):
        self.kernel = kernel
        self.timeline = timeline
        self.delivery = delivery or DeliveryModel()
        self._lock = threading.RLock()
        self._nodes: Dict[NodeId, Optional[ParameterHost]] = {}
        self._finalized: set = set()
        self._subscriptions: Dict[TopicName, List[Subscription]] = defaultdict(list)
        self._services: Dict[TopicName, _ServiceServer] = {}
        self._actions: Dict[TopicName, _ActionServer] = {}
        self._seq: Dict[Tuple[NodeId, TopicName], int] = defaultdict(int)
        self._last_delivery: Dict[Tuple[NodeId, NodeId, str], int] = {}
        self._ids = itertools.count(1)
        self.latency_samples: Dict[str, List[int]] = defaultdict(list)

    # registration

    def register_node(self, node_id: NodeId, host: Optional[ParameterHost] = None) -> None:
        with self._lock:
            self._nodes[node_id] = host
            self._finalized.discard(node_id)

    def unregister_node(self, node_id: NodeId) -> None:
        """Node finalized: it stops publishing, receiving, serving and being reachable."""
        with self._lock:
            if node_id not in self._nodes:
                return
            del self._nodes[node_id]
            self._finalized.add(node_id)
            for subscriptions in self._subscriptions.values():
                for subscription in subscriptions:
                    if subscription.subscriber == node_id:
                        subscription.active = False
                subscriptions[:] = [s for s in subscriptions if s.active]
            for name in [n for n, s in self._services.items() if s.server == node_id]:
                self._services.pop(name).active = False
            lost = [a for a in self._actions.values() if a.server == node_id]
            for name in [a.action for a in lost]:
                del self._actions[name]
        for server in lost:
            server.active = False
            for handle in list(server.in_flight.values()):
                handle.abort("server-lost")

    def is_registered(self, node_id: NodeId) -> bool:
        return node_id in self._nodes

    def _require_node(self, node_id: NodeId, code: str) -> None:
        if node_id not in self._nodes:
            raise BusError(f"node {node_id} is not registered on the bus", code=code)

    def _record(self, node: NodeId, kind: EventKind, text: str = "", **fields) -> None:
        if self.timeline is not None:
            self.timeline.record(node, kind, text, **fields)

    def _delivery_time(self, channel: Tuple[NodeId, NodeId, str], sent_at: int) -> int:
        with self._lock:
            at = sent_at + self.delivery.draw_delay()
            at = max(at, self._last_delivery.get(channel, 0))
            self._last_delivery[channel] = at
            return at

    # topics

    def publish(self, publisher: NodeId, topic: str, payload: bytes) -> int:
        topic = TopicName(topic)
        with self._lock:
            self._require_node(publisher, "unknown-publisher")
            self._seq[(publisher, topic)] += 1
            seq = self._seq[(publisher, topic)]
            now = self.kernel.now()
            self._record(publisher, EventKind.PUBLISH, topic=topic, seq=seq)
            for subscription in list(self._subscriptions.get(topic, ())):
                if not subscription.active:
                    continue
                envelope = Envelope(topic, publisher, seq, now, bytes(payload))
                at = self._delivery_time((publisher, subscription.subscriber, topic), now)
                self.kernel.schedule_at(at, self._deliver, subscription, envelope)
        return seq

    def _deliver(self, subscription: Subscription, envelope: Envelope) -> None:
        if not subscription.active:
            return
        now = self.kernel.now()
        envelope = Envelope(envelope.topic, envelope.publisher, envelope.seq, envelope.publish_time,
                            envelope.payload, delivered_time=now)
        self.latency_samples[envelope.topic].append(now - envelope.publish_time)
        self._record(subscription.subscriber, EventKind.DELIVER, topic=envelope.topic,
                     publisher=envelope.publisher, seq=envelope.seq)
        subscription.handler(envelope)

    def subscribe(self, subscriber: NodeId, topic: str,
                  handler: Callable[[Envelope], None]) -> SubscriptionId:
        topic = TopicName(topic)
        with self._lock:
            self._require_node(subscriber, "unknown-subscriber")
            for existing in self._subscriptions[topic]:
                if existing.active and existing.subscriber == subscriber and existing.handler == handler:
                    raise BusError(f"{subscriber} already subscribed to {topic} with this handler",
                                   code="duplicate-subscription")
            subscription = Subscription(next(self._ids), subscriber, topic, handler)
            self._subscriptions[topic].append(subscription)
            return subscription.subscription_id

    def unsubscribe(self, subscription_id: SubscriptionId) -> bool:
        with self._lock:
            for subscriptions in self._subscriptions.values():
                for subscription in subscriptions:
                    if subscription.subscription_id == subscription_id:
                        subscription.active = False
                        subscriptions.remove(subscription)
                        return True
        return False

    # services

    def register_service(self, server: NodeId, service: str,
                         handler: Callable[[ServiceRequest], Optional[bytes]],
                         response_delay: int = 0) -> None:
        service = TopicName(service)
        with self._lock:
            self._require_node(server, "unknown-server")
            if service in self._services:
                raise BusError(f"{service} already served by {self._services[service].server}",
                               code="service-exists")
            self._services[service] = _ServiceServer(server, service, handler, response_delay)

    def unregister_service(self, service: str) -> None:
        with self._lock:
            server = self._services.pop(TopicName(service), None)
            if server is not None:
                server.active = False

    def call_service(self, client: NodeId, service: str, payload: bytes, timeout: int,
                     on_complete: Callable[[ServiceOutcome], None]) -> int:
        """Completes exactly once: a response strictly before the deadline, else TIMEOUT at it."""
        service = TopicName(service)
        with self._lock:
            self._require_node(client, "unknown-client")
            now = self.kernel.now()
            request = ServiceRequest(service, next(self._ids), client, bytes(payload), now + timeout)
            call = _PendingCall(request, on_complete)
            call.timeout_event = self.kernel.schedule_at(request.deadline, self._expire, call)
            server = self._services.get(service)
            if server is not None:
                at = self._delivery_time((client, server.server, service), now)
                self.kernel.schedule_at(at, self._serve, server, call)
        return request.request_id

    def _serve(self, server: _ServiceServer, call: _PendingCall) -> None:
        if not server.active:
            return
        reply = server.handler(call.request)
        if reply is None:
            return
        sent_at = self.kernel.now() + server.response_delay
        at = self._delivery_time((server.server, call.request.sender, server.service), sent_at)
        response = ServiceResponse(server.service, call.request.request_id, server.server, bytes(reply), at)
        self.kernel.schedule_at(at, self._respond, call, response)

    def _respond(self, call: _PendingCall, response: ServiceResponse) -> None:
        if call.done:
            self._record(call.request.sender, EventKind.LOG, "late-response-discarded",
                         service=response.service, request=response.request_id)
            return
        call.done = True
        self.kernel.cancel(call.timeout_event)
        self._record(call.request.sender, EventKind.DELIVER, service=response.service,
                     request=response.request_id, responder=response.responder)
        if call.request.sender in self._nodes:
            call.on_complete(response)

    def _expire(self, call: _PendingCall) -> None:
        if call.done:
            return
        call.done = True
        if call.request.sender in self._nodes:
            call.on_complete(TIMEOUT)

    # actions

    def register_action(self, server: NodeId, action: str, execute: Callable[[GoalHandle], None]) -> None:
        action = TopicName(action)
        with self._lock:
            self._require_node(server, "unknown-server")
            if action in self._actions:
                raise BusError(f"{action} already served by {self._actions[action].server}",
                               code="service-exists")
            self._actions[action] = _ActionServer(server, action, execute)

    def send_goal(self, client: NodeId, action: str, goal: bytes,
                  observer: Optional[ActionObserver] = None) -> ActionExchange:
        action = TopicName(action)
        with self._lock:
            self._require_node(client, "unknown-client")
            exchange = ActionExchange(next(self._ids), action, client, bytes(goal))
            exchange.observer = observer or ActionObserver()
            server = self._actions.get(action)
            now = self.kernel.now()
            if server is None:
                exchange.advance(ActionStatus.ABORTED)
                exchange.reason = "no-server"
                exchange.result = b""
                log_event("GOAL_ABORTED", goal_id=exchange.goal_id, action=action, reason="no-server",
                          sim_time_us=now)
                self.kernel.schedule_at(now, self._client_event, exchange, "status", None)
                self.kernel.schedule_at(now, self._client_event, exchange, "result", None)
                return exchange
            at = self._delivery_time((client, server.server, action), now)
            self.kernel.schedule_at(at, self._start_goal, server, exchange)
        return exchange

    def _start_goal(self, server: _ActionServer, exchange: ActionExchange) -> None:
        if exchange.finished:
            return
        if not server.active:
            self._finish_goal(server.server, exchange, ActionStatus.ABORTED, b"", "server-lost")
            return
        handle = GoalHandle(self, server.server, exchange)
        server.in_flight[exchange.goal_id] = handle
        exchange.advance(ActionStatus.ACCEPTED)
        self._notify_client(server.server, exchange, "status", None)
        exchange.advance(ActionStatus.EXECUTING)
        self._notify_client(server.server, exchange, "status", None)
        server.execute(handle)

    def _finish_goal(self, server: NodeId, exchange: ActionExchange, status: ActionStatus,
                     result: bytes, reason: str = "") -> None:
        if exchange.finished:
            return
        exchange.advance(status)
        exchange.result = bytes(result)
        exchange.reason = reason
        owner = self._actions.get(exchange.action)
        if owner is not None:
            owner.in_flight.pop(exchange.goal_id, None)
        self._notify_client(server, exchange, "status", None)
        self._notify_client(server, exchange, "result", None)

    def _notify_client(self, server: NodeId, exchange: ActionExchange, kind: str, data: Optional[bytes]) -> None:
        # status is captured now; the client sees it after the channel delay
        at = self._delivery_time((server, exchange.client, exchange.action), self.kernel.now())
        status = exchange.status
        self.kernel.schedule_at(at, self._client_event, exchange, kind, data, status)

    def _client_event(self, exchange: ActionExchange, kind: str, data: Optional[bytes],
                      status: Optional[ActionStatus] = None) -> None:
        if exchange.client not in self._nodes:
            return
        status = status or exchange.status
        observer: ActionObserver = exchange.observer
        if kind == "feedback":
            self._record(exchange.client, EventKind.DELIVER, "goal-feedback", action=exchange.action,
                         goal=exchange.goal_id, size=len(data))
            if observer.on_feedback:
                observer.on_feedback(exchange, data)
        elif kind == "status":
            self._record(exchange.client, EventKind.DELIVER, "goal-status", action=exchange.action,
                         goal=exchange.goal_id, status=status.value)
            if observer.on_status:
                observer.on_status(exchange)
        else:
            self._record(exchange.client, EventKind.DELIVER, "goal-result", action=exchange.action,
                         goal=exchange.goal_id, status=exchange.status.value,
                         reason=exchange.reason or "-")
            if observer.on_result:
                observer.on_result(exchange)

    # parameters

    def _parameter_host(self, target: NodeId) -> ParameterHost:
        host = self._nodes.get(target)
        if host is None:
            raise ParameterError(f"{target} is not reachable", code="unreachable")
        return host

    def get_parameter(self, requester: NodeId, target: NodeId, key: str) -> ParameterValue:
        with self._lock:
            host = self._parameter_host(target)
            if key not in host.parameters:
                raise ParameterError(f"{target} does not declare {key}", code="unknown-parameter")
            return host.parameters[key]

    def set_parameter(self, requester: NodeId, target: NodeId, key: str,
                      value: ParameterValue) -> ParameterValue:
        """Installs value atomically and returns the previous one."""
        with self._lock:
            host = self._parameter_host(target)
            if key not in host.parameters:
                raise ParameterError(f"{target} does not declare {key}", code="unknown-parameter")
            previous = host.parameters[key]
            host.parameters[key] = value
        self._record(requester, EventKind.LOG, "parameter-set", target=target, key=key,
                     old=previous, new=value)
        host.on_parameter_set(key, previous, value)
        return previous
