import pytest

from cubesat_fsw.core.lifecycle import (
    TRANSITIONS,
    LifecycleNode,
    LifecycleState,
    TransitionFailure,
    TransitionKind,
)
from cubesat_fsw.core.message_bus import DeliveryModel, MessageBus
from cubesat_fsw.core.sim_kernel import SimKernel
from cubesat_fsw.core.timeline import EventKind, Timeline
from cubesat_fsw.utils.error_handling import LifecycleTransitionError


class Recorder(LifecycleNode):
    def __init__(self, *args, fail_on=None, recoverable=True, **kwargs):
        super().__init__(*args, **kwargs)
        self.calls = []
        self.released = 0
        self.fail_on = fail_on
        self.recoverable = recoverable

    def _call(self, name):
        self.calls.append(name)
        if self.fail_on == name:
            raise TransitionFailure(f"{name} failed", recoverable=self.recoverable)

    def on_configure(self):
        self._call("configure")

    def on_activate(self):
        self._call("activate")

    def on_deactivate(self):
        self._call("deactivate")

    def on_cleanup(self):
        self._call("cleanup")

    def on_shutdown(self):
        self._call("shutdown")

    def release_resources(self):
        self.released += 1


def make_node(duration=0, **kwargs):
    kernel = SimKernel()
    timeline = Timeline(kernel.now)
    bus = MessageBus(kernel, timeline, DeliveryModel())
    return kernel, timeline, bus, Recorder("node", kernel, bus, timeline, transition_duration=duration, **kwargs)


def states(timeline):
    return [event.detail.split()[1] for event in timeline.select(EventKind.STATE_CHANGE, node="node")]


def test_full_cycle_through_every_primary_state():
    _, timeline, _, node = make_node()
    assert node.request_transition(TransitionKind.CONFIGURE) is LifecycleState.INACTIVE
    assert node.request_transition(TransitionKind.ACTIVATE) is LifecycleState.ACTIVE
    assert node.request_transition(TransitionKind.DEACTIVATE) is LifecycleState.INACTIVE
    assert node.request_transition(TransitionKind.CLEANUP) is LifecycleState.UNCONFIGURED
    assert node.request_transition(TransitionKind.SHUTDOWN) is LifecycleState.FINALIZED
    assert node.calls == ["configure", "activate", "deactivate", "cleanup", "shutdown"]
    assert states(timeline) == [
        "Unconfigured->Configuring", "Configuring->Inactive",
        "Inactive->Activating", "Activating->Active",
        "Active->Deactivating", "Deactivating->Inactive",
        "Inactive->CleaningUp", "CleaningUp->Unconfigured",
        "Unconfigured->ShuttingDown", "ShuttingDown->Finalized",
    ]
    assert node.released == 1


def test_invalid_transition_is_refused_without_a_state_change():
    _, timeline, _, node = make_node()
    with pytest.raises(LifecycleTransitionError) as excinfo:
        node.request_transition(TransitionKind.ACTIVATE)
    assert excinfo.value.code == "invalid-transition"
    assert node.state is LifecycleState.UNCONFIGURED
    assert states(timeline) == []


REACH = {
    LifecycleState.UNCONFIGURED: [],
    LifecycleState.INACTIVE: [TransitionKind.CONFIGURE],
    LifecycleState.ACTIVE: [TransitionKind.CONFIGURE, TransitionKind.ACTIVATE],
    LifecycleState.FINALIZED: [TransitionKind.SHUTDOWN],
}


@pytest.mark.parametrize("kind", list(TransitionKind), ids=lambda k: k.value)
@pytest.mark.parametrize("source", sorted(REACH, key=list(LifecycleState).index), ids=lambda s: s.value)
def test_every_state_and_request_against_the_transition_table(source, kind):
    _, timeline, _, node = make_node()
    for step in REACH[source]:
        node.request_transition(step)
    assert node.state is source
    before = len(states(timeline))
    if (source, kind) in TRANSITIONS:
        transition_state, target = TRANSITIONS[(source, kind)]
        assert not transition_state.primary and target.primary
        assert node.request_transition(kind) is target
        assert states(timeline)[before:] == [f"{source.value}->{transition_state.value}",
                                             f"{transition_state.value}->{target.value}"]
    else:
        with pytest.raises(LifecycleTransitionError) as excinfo:
            node.request_transition(kind)
        assert excinfo.value.code == ("terminal" if source is LifecycleState.FINALIZED else "invalid-transition")
        assert node.state is source
        assert len(states(timeline)) == before


def test_finalized_is_terminal():
    _, _, _, node = make_node()
    node.request_transition(TransitionKind.SHUTDOWN)
    with pytest.raises(LifecycleTransitionError) as excinfo:
        node.request_transition(TransitionKind.CONFIGURE)
    assert excinfo.value.code == "terminal"


def test_recoverable_failure_returns_to_unconfigured():
    _, timeline, _, node = make_node(fail_on="configure")
    assert node.request_transition(TransitionKind.CONFIGURE) is LifecycleState.UNCONFIGURED
    assert states(timeline) == [
        "Unconfigured->Configuring", "Configuring->ErrorProcessing", "ErrorProcessing->Unconfigured",
    ]
    assert node.alive


def test_unrecoverable_failure_finalizes_and_leaves_the_bus():
    _, _, bus, node = make_node(fail_on="activate", recoverable=False)
    node.request_transition(TransitionKind.CONFIGURE)
    assert node.request_transition(TransitionKind.ACTIVATE) is LifecycleState.FINALIZED
    assert not bus.is_registered("node")
    assert node.released == 1


def test_requests_during_a_transition_are_queued_in_order():
    kernel, timeline, _, node = make_node(duration=100)
    assert node.request_transition(TransitionKind.CONFIGURE) is LifecycleState.CONFIGURING
    assert node.request_transition(TransitionKind.ACTIVATE) is LifecycleState.CONFIGURING
    # invalid once its turn comes: the node is already Active
    node.request_transition(TransitionKind.ACTIVATE)
    kernel.run_until(1_000)
    assert node.state is LifecycleState.ACTIVE
    assert node.calls == ["configure", "activate"]
    rejected = timeline.select(EventKind.LOG, node="node", text="transition-rejected")
    assert len(rejected) == 1
    assert rejected[0].fields["state"] == "Active"


def test_transition_duration_completes_later():
    kernel, timeline, _, node = make_node(duration=250)
    node.request_transition(TransitionKind.CONFIGURE)
    kernel.run_until(249)
    assert node.state is LifecycleState.CONFIGURING
    kernel.run_until(250)
    assert node.state is LifecycleState.INACTIVE
    assert timeline.select(EventKind.STATE_CHANGE, text="lifecycle Configuring->Inactive")[0].time == 250


def test_bring_up_reaches_active_and_reports():
    kernel, _, _, node = make_node(duration=10)
    reached = []
    node.bring_up(on_active=lambda: reached.append(kernel.now()))
    kernel.run_until(100)
    assert node.state is LifecycleState.ACTIVE
    assert reached == [20]


def test_kill_skips_callbacks_and_cancels_timers():
    kernel, timeline, bus, node = make_node()
    node.bring_up()
    fired = []
    node.schedule(500, fired.append, "timer")
    node.kill("crash")
    kernel.run_until(1_000)
    assert fired == []
    assert node.state is LifecycleState.FINALIZED
    assert "shutdown" not in node.calls
    assert node.released == 1
    assert not bus.is_registered("node")
    assert timeline.select(EventKind.STATE_CHANGE, text="lifecycle Active->Finalized", reason="crash")
    node.kill("again")
    assert node.released == 1


def test_kill_during_a_transition_wins():
    kernel, _, _, node = make_node(duration=100)
    node.request_transition(TransitionKind.CONFIGURE)
    node.kill()
    kernel.run_until(1_000)
    assert node.state is LifecycleState.FINALIZED


def test_guarded_callbacks_are_dropped_after_finalize():
    _, _, _, node = make_node()
    seen = []
    callback = node.guarded(seen.append)
    callback(1)
    node.kill()
    callback(2)
    assert seen == [1]
