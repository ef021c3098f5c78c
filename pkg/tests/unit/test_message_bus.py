import random

import pytest

from cubesat_fsw.core.message_bus import (
    TIMEOUT,
    ActionObserver,
    ActionStatus,
    DeliveryModel,
    MessageBus,
    ServiceResponse,
    TopicName,
)
from cubesat_fsw.core.sim_kernel import SimKernel
from cubesat_fsw.core.timeline import EventKind, Timeline
from cubesat_fsw.utils.error_handling import BusError, ParameterError


class Host:
    def __init__(self, **parameters):
        self.parameters = dict(parameters)
        self.changes = []

    def on_parameter_set(self, key, old, new):
        self.changes.append((key, old, new))


def make_bus(base_delay=100, jitter=0, seed=1):
    kernel = SimKernel(seed)
    timeline = Timeline(kernel.now)
    bus = MessageBus(kernel, timeline, DeliveryModel(base_delay, jitter, seed))
    return kernel, timeline, bus


def test_topic_names_are_validated():
    assert TopicName("/telemetry/payload1") == "/telemetry/payload1"
    for bad in ("", "/a//b", "a b"):
        with pytest.raises(ValueError):
            TopicName(bad)


def test_publish_delivers_after_base_delay_in_order():
    kernel, timeline, bus = make_bus()
    bus.register_node("pub")
    bus.register_node("sub")
    received = []
    bus.subscribe("sub", "/data", lambda env: received.append((kernel.now(), env.seq, env.payload)))
    for index in range(3):
        bus.publish("pub", "/data", bytes([index]))
    kernel.run_until(1_000)
    assert received == [(100, 1, b"\x00"), (100, 2, b"\x01"), (100, 3, b"\x02")]
    assert bus.latency_samples["/data"] == [100, 100, 100]
    assert len(timeline.select(EventKind.DELIVER, node="sub")) == 3


def test_jitter_never_reorders_a_channel():
    kernel, _, bus = make_bus(base_delay=10, jitter=500, seed=4)
    bus.register_node("pub")
    bus.register_node("sub")
    seqs = []
    bus.subscribe("sub", "/data", lambda env: seqs.append(env.seq))
    for step in range(100):
        kernel.schedule_at(step * 5, bus.publish, "pub", "/data", b"x")
    kernel.run_until(10_000)
    assert seqs == sorted(seqs) and len(seqs) == 100
    assert max(bus.latency_samples["/data"]) <= 10 + 500 + 5 * 100


def test_unregistered_publisher_is_rejected():
    _, _, bus = make_bus()
    with pytest.raises(BusError) as excinfo:
        bus.publish("ghost", "/data", b"")
    assert excinfo.value.code == "unknown-publisher"


def test_duplicate_subscription_is_rejected():
    _, _, bus = make_bus()
    bus.register_node("sub")

    def handler(env):
        pass

    bus.subscribe("sub", "/data", handler)
    with pytest.raises(BusError) as excinfo:
        bus.subscribe("sub", "/data", handler)
    assert excinfo.value.code == "duplicate-subscription"


def test_publish_with_no_subscribers_is_fine():
    kernel, timeline, bus = make_bus()
    bus.register_node("pub")
    assert bus.publish("pub", "/nobody", b"x") == 1
    kernel.run_until(1_000)
    assert timeline.select(EventKind.DELIVER) == []


def test_finalized_subscriber_gets_nothing_more():
    kernel, _, bus = make_bus()
    bus.register_node("pub")
    bus.register_node("sub")
    received = []
    bus.subscribe("sub", "/data", received.append)
    bus.publish("pub", "/data", b"1")
    bus.unregister_node("sub")
    kernel.run_until(1_000)
    assert received == []


def test_service_call_round_trip():
    kernel, _, bus = make_bus()
    bus.register_node("client")
    bus.register_node("server")
    bus.register_service("server", "/liveness/server", lambda request: b"\x01")
    outcomes = []
    bus.call_service("client", "/liveness/server", b"?", 1_000, outcomes.append)
    kernel.run_until(10_000)
    assert len(outcomes) == 1
    assert isinstance(outcomes[0], ServiceResponse)
    assert outcomes[0].payload == b"\x01"
    assert outcomes[0].responded_at == 200


def test_service_timeout_fires_exactly_at_deadline():
    kernel, _, bus = make_bus()
    bus.register_node("client")
    outcomes = []
    bus.call_service("client", "/liveness/nobody", b"?", 500, lambda outcome: outcomes.append((kernel.now(), outcome)))
    kernel.run_until(10_000)
    assert outcomes == [(500, TIMEOUT)]


def test_late_response_is_discarded_after_timeout():
    kernel, timeline, bus = make_bus()
    bus.register_node("client")
    bus.register_node("server")
    bus.register_service("server", "/slow", lambda request: b"late", response_delay=1_000)
    outcomes = []
    bus.call_service("client", "/slow", b"", 300, outcomes.append)
    kernel.run_until(10_000)
    assert outcomes == [TIMEOUT]
    assert timeline.select(EventKind.LOG, text="late-response-discarded")


def test_duplicate_service_is_rejected():
    _, _, bus = make_bus()
    bus.register_node("a")
    bus.register_node("b")
    bus.register_service("a", "/svc", lambda request: b"")
    with pytest.raises(BusError) as excinfo:
        bus.register_service("b", "/svc", lambda request: b"")
    assert excinfo.value.code == "service-exists"


def test_action_goal_feedback_and_result():
    kernel, _, bus = make_bus()
    bus.register_node("client")
    bus.register_node("server")

    def execute(handle):
        handle.publish_feedback(b"half")
        kernel.schedule_after(1_000, handle.succeed, b"done")

    bus.register_action("server", "/work", execute)
    statuses, feedback, results = [], [], []
    observer = ActionObserver(on_status=lambda ex: statuses.append(ex.status),
                              on_feedback=lambda ex, data: feedback.append(data),
                              on_result=lambda ex: results.append(ex.result))
    exchange = bus.send_goal("client", "/work", b"go", observer)
    kernel.run_until(10_000)
    assert feedback == [b"half"]
    assert results == [b"done"]
    assert exchange.status is ActionStatus.SUCCEEDED
    assert statuses[-1] is ActionStatus.SUCCEEDED


def test_goal_is_aborted_when_server_finalizes():
    kernel, _, bus = make_bus()
    bus.register_node("client")
    bus.register_node("server")
    bus.register_action("server", "/work", lambda handle: None)
    exchange = bus.send_goal("client", "/work", b"go")
    kernel.run_until(1_000)
    bus.unregister_node("server")
    kernel.run_until(2_000)
    assert exchange.status is ActionStatus.ABORTED
    assert exchange.reason == "server-lost"


def test_goal_without_server_aborts():
    kernel, _, bus = make_bus()
    bus.register_node("client")
    exchange = bus.send_goal("client", "/missing", b"")
    kernel.run_until(10)
    assert exchange.status is ActionStatus.ABORTED
    assert exchange.reason == "no-server"


GOAL_EDGES = {
    None: {"accepted", "aborted"},
    "accepted": {"executing", "aborted"},
    "executing": {"succeeded", "aborted"},
    "succeeded": set(),
    "aborted": set(),
}


@pytest.mark.parametrize("seed", range(40))
def test_goal_statuses_only_move_forward(seed):
    rng = random.Random(seed)
    kernel, timeline, bus = make_bus(jitter=rng.choice([0, 50, 500]), seed=seed)
    bus.register_node("client")
    bus.register_node("server")

    def execute(handle):
        delay = rng.randrange(0, 3_000)
        outcome = rng.choice(["succeed", "abort", "hang", "twice"])
        if outcome in ("succeed", "twice"):
            kernel.schedule_after(delay, handle.succeed, b"ok")
        if outcome == "abort":
            kernel.schedule_after(delay, handle.abort, "refused")
        if outcome == "twice":
            kernel.schedule_after(delay + 1, handle.abort, "late")

    bus.register_action("server", "/work", execute)
    exchanges = []
    for _ in range(rng.randrange(1, 12)):
        kernel.schedule_at(rng.randrange(0, 20_000),
                           lambda: exchanges.append(bus.send_goal("client", "/work", b"go")))
    if rng.random() < 0.5:
        kernel.schedule_at(rng.randrange(0, 20_000), bus.unregister_node, "server")
    kernel.run_until(50_000)

    for exchange in exchanges:
        seen = [row.fields["status"] for row in
                timeline.select(EventKind.DELIVER, node="client", text="goal-status", goal=exchange.goal_id)]
        previous = None
        for status in seen:
            assert status in GOAL_EDGES[previous], f"goal {exchange.goal_id}: {previous} -> {status}"
            previous = status
        results = timeline.select(EventKind.DELIVER, node="client", text="goal-result", goal=exchange.goal_id)
        if exchange.finished:
            assert previous == exchange.status.value
            assert len(results) == 1
        else:
            assert exchange.status is ActionStatus.EXECUTING
            assert seen == ["accepted", "executing"] and results == []


def test_remote_parameters():
    _, timeline, bus = make_bus()
    host = Host(poll_delay_ms=20)
    bus.register_node("maintenance")
    bus.register_node("payload1", host)
    assert bus.get_parameter("maintenance", "payload1", "poll_delay_ms") == 20
    assert bus.set_parameter("maintenance", "payload1", "poll_delay_ms", 30) == 20
    assert host.parameters["poll_delay_ms"] == 30
    assert host.changes == [("poll_delay_ms", 20, 30)]
    assert timeline.select(EventKind.LOG, text="parameter-set", target="payload1")
    with pytest.raises(ParameterError) as excinfo:
        bus.get_parameter("maintenance", "payload1", "nope")
    assert excinfo.value.code == "unknown-parameter"
    bus.unregister_node("payload1")
    with pytest.raises(ParameterError) as excinfo:
        bus.set_parameter("maintenance", "payload1", "poll_delay_ms", 1)
    assert excinfo.value.code == "unreachable"
