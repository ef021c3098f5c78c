"""
Timeline analyses and the `expect` checks a scenario can carry.

Each check takes the finished run and the expected value from the scenario file and
returns None when it holds, or a message saying what was found instead.
"""
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from cubesat_fsw.core.lifecycle import LifecycleState
from cubesat_fsw.core.timeline import EventKind, Timeline, TimelineEvent, intervals

Span = Tuple[int, int]


# timeline analyses

def ownership_spans(timeline: Timeline, end_time: int, node: Optional[str] = None) -> List[Tuple[str, int, int]]:
    """CAN ownership as (owner, acquired_at, released_at); an unreleased bus ends at end_time."""
    events = timeline.select()
    owners = sorted({e.node for e in events if e.event_kind == EventKind.ACQUIRE.value})
    spans = []
    for owner in owners:
        if node is not None and owner != node:
            continue
        rows = [e for e in events if e.node == owner]
        for start, end in intervals(rows, lambda e: e.event_kind == EventKind.ACQUIRE.value,
                                    lambda e: e.event_kind == EventKind.RELEASE.value, end_time):
            spans.append((owner, start, end))
    return sorted(spans, key=lambda span: (span[1], span[2]))


def run_state_spans(timeline: Timeline, node: str, state: str, end_time: int,
                    reason: Optional[str] = None) -> List[Span]:
    """Intervals a payload spent in one run state, optionally only those entered for `reason`."""
    rows = timeline.select(EventKind.STATE_CHANGE, node=node)

    def opens(event: TimelineEvent) -> bool:
        if not event.detail.startswith("run ") or not event.detail.split()[1].endswith(f"->{state}"):
            return False
        return reason is None or event.fields.get("reason") == reason

    def closes(event: TimelineEvent) -> bool:
        words = event.detail.split()
        return (event.detail.startswith(f"run {state}->")
                or (words[0] == "lifecycle" and words[1].endswith("->Finalized")))

    return intervals(rows, opens, closes, end_time)


def overlaps(a: Span, b: Span) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def first_overlap(spans: Sequence[Tuple[str, int, int]]) -> Optional[Tuple]:
    ordered = sorted(spans, key=lambda span: span[1])
    for earlier, later in zip(ordered, ordered[1:]):
        if later[1] < earlier[2]:
            return earlier, later
    return None


def grants(timeline: Timeline) -> List[TimelineEvent]:
    return timeline.select(EventKind.GRANT)


def restart_pairs(timeline: Timeline) -> List[Tuple[str, str]]:
    return [(e.fields["prober"], e.fields["target"]) for e in timeline.select(EventKind.RESTART)]


def telemetry_publishes(timeline: Timeline, node: str, after: int = -1) -> List[TimelineEvent]:
    return [e for e in timeline.select(EventKind.PUBLISH, node=node, topic=f"/telemetry/{node}") if e.time > after]


# expect checks

def _count(found: int, expected: Any, what: str) -> Optional[str]:
    return None if found == int(expected) else f"expected {expected} {what}, found {found}"


def check_grants(result, expected) -> Optional[str]:
    return _count(len(grants(result.timeline)), expected, "grants")


def check_grant_rotation(result, expected) -> Optional[str]:
    if not expected:
        return None
    rotation = result.system.can_bus.slots
    targets = [e.fields["target"] for e in grants(result.timeline)]
    for index, target in enumerate(targets):
        if target != rotation[index % len(rotation)]:
            return f"grant {index + 1} went to {target}, rotation expects {rotation[index % len(rotation)]}"
    return None


def check_blocked_ticks(result, expected) -> Optional[str]:
    return _count(len(result.timeline.select(EventKind.LOG, text="blocked")), expected, "blocked ticks")


def check_exclusive_ownership(result, expected) -> Optional[str]:
    if not expected:
        return None
    clash = first_overlap(ownership_spans(result.timeline, result.end_time))
    return None if clash is None else f"overlapping CAN ownership: {clash[0]} and {clash[1]}"


def check_record_per_grant(result, expected) -> Optional[str]:
    if not expected:
        return None
    system = result.system
    ttc = system.nodes_of_kind("ttc")
    stored = set(ttc[0].records) if ttc else set()
    for grant in grants(result.timeline):
        key = (system.payload_id_of(grant.fields["target"]), int(grant.fields["cycle"]))
        if key not in stored:
            return f"no telemetry record stored for payload {key[0]} cycle {key[1]}"
    if len(stored) != len(grants(result.timeline)):
        return f"{len(stored)} records stored for {len(grants(result.timeline))} grants"
    return None


def check_next_grant_after_block(result, expected) -> Optional[str]:
    blocked = result.timeline.select(EventKind.LOG, text="blocked")
    if not blocked:
        return "no blocked tick"
    later = [g for g in grants(result.timeline) if g.time > blocked[0].time]
    if not later:
        return "no grant after the blocked tick"
    target = later[0].fields["target"]
    return None if target == expected else f"first grant after the block went to {target}, expected {expected}"


def check_restarts(result, expected) -> Optional[str]:
    return _count(len(restart_pairs(result.timeline)), expected, "restarts")


def check_restart_order(result, expected) -> Optional[str]:
    found = restart_pairs(result.timeline)
    wanted = [tuple(pair) for pair in expected]
    return None if found == wanted else f"restart order {found}, expected {wanted}"


def check_restart_on_threshold(result, expected) -> Optional[str]:
    if not expected:
        return None
    threshold = result.system.settings.probe_threshold
    for restart in result.timeline.select(EventKind.RESTART):
        prober, target = restart.fields["prober"], restart.fields["target"]
        timeouts = [e for e in result.timeline.select(EventKind.TIMEOUT, node=prober, text="probe", target=target)
                    if e.seq < restart.seq]
        if not timeouts or timeouts[-1].fields.get("count") != str(threshold) or timeouts[-1].time != restart.time:
            return f"restart {prober}->{target} at {restart.time} did not follow timeout number {threshold}"
    return None


def check_timeouts_below_threshold(result, expected) -> Optional[str]:
    """No prober counted `threshold` probe timeouts against the node, restart or not."""
    threshold = result.system.settings.probe_threshold
    counts = [int(e.fields["count"]) for e in result.timeline.select(EventKind.TIMEOUT, text="probe", target=expected)]
    if counts and max(counts) >= threshold:
        return f"{expected} reached {max(counts)} consecutive probe timeouts (threshold {threshold})"
    if result.timeline.select(EventKind.LOG, text="restart-suppressed", target=expected):
        return f"a restart of {expected} was suppressed"
    return None


def check_reboots(result, expected) -> Optional[str]:
    return _count(len(result.timeline.select(EventKind.REBOOT)), expected, "reboots")


def check_all_active(result, expected) -> Optional[str]:
    if bool(expected) == result.system.all_active():
        return None
    states = {node_id: result.system.current_state(node_id).value for node_id in result.system.specs}
    return f"final states {states}"


def check_final_states(result, expected) -> Optional[str]:
    for node_id, state in expected.items():
        found = result.system.current_state(node_id)
        if found is not LifecycleState(state):
            return f"{node_id} ended {found.value}, expected {state}"
    return None


def check_frames(result, expected) -> Optional[str]:
    rows = result.timeline.select(EventKind.FRAME_OUT)
    for frame_type, count in expected.items():
        wanted = f"{int(str(frame_type), 0):#04x}"
        found = sum(1 for row in rows if row.fields.get("type") == wanted)
        if found != int(count):
            return f"expected {count} frames of type {wanted}, found {found}"
    return None


def check_overlap(result, expected) -> Optional[str]:
    for item in expected:
        a_spans = _state_spans(result, item["a"], item["a_state"])
        b_spans = _state_spans(result, item["b"], item["b_state"])
        if not any(overlaps(a, b) for a in a_spans for b in b_spans):
            return f"{item['a']} {item['a_state']} never overlaps {item['b']} {item['b_state']}"
    return None


def _state_spans(result, node: str, state: str) -> List[Span]:
    if state == "owning_can":
        return [(start, end) for _, start, end in ownership_spans(result.timeline, result.end_time, node)]
    return run_state_spans(result.timeline, node, state, result.end_time)


def check_command_deferred(result, expected) -> Optional[str]:
    """A queued command is handled asynchronously at receipt and executed in a later ownership."""
    node = expected
    queued = result.timeline.select(EventKind.LOG, node=node, text="command-queued")
    if not queued:
        return f"{node} never queued a command"
    handling = run_state_spans(result.timeline, node, "other_async_commands", result.end_time, reason="command")
    if not any(start <= queued[0].time < end for start, end in handling):
        return f"{node} did not enter other_async_commands when the command arrived"
    executed = result.timeline.select(EventKind.LOG, node=node, text="command-executed")
    owned = [(start, end) for _, start, end in ownership_spans(result.timeline, result.end_time, node)
             if start > queued[0].time]
    if not executed or not any(start <= executed[0].time < end for start, end in owned):
        return f"{node} did not execute the command inside a later CAN ownership"
    return None


def check_acquires_after_replace(result, expected) -> Optional[str]:
    done = result.timeline.select(EventKind.LOG, text="replace-done", target=expected)
    if not done:
        return f"replacement of {expected} never completed"
    acquired = [e for e in result.timeline.select(EventKind.ACQUIRE, node=expected) if e.time > done[-1].time]
    return None if acquired else f"replaced {expected} never acquired the CAN bus"


def check_telemetry_after_reboot(result, expected) -> Optional[str]:
    if not expected:
        return None
    reboots = result.timeline.select(EventKind.REBOOT)
    if not reboots:
        return "no reboot happened"
    for node_id in result.system.payloads:
        if not telemetry_publishes(result.timeline, node_id, after=reboots[-1].time):
            return f"{node_id} published no telemetry after the reboot"
    return None


def check_imaging_succeeded(result, expected) -> Optional[str]:
    return _count(len(result.timeline.select(EventKind.LOG, text="imaging-succeeded")), expected,
                  "successful imaging tasks")


CHECKS: Dict[str, Callable[[Any, Any], Optional[str]]] = {
    "grants": check_grants,
    "grant_rotation": check_grant_rotation,
    "blocked_ticks": check_blocked_ticks,
    "exclusive_ownership": check_exclusive_ownership,
    "record_per_grant": check_record_per_grant,
    "next_grant_after_block": check_next_grant_after_block,
    "restarts": check_restarts,
    "restart_order": check_restart_order,
    "restart_on_threshold": check_restart_on_threshold,
    "timeouts_below_threshold": check_timeouts_below_threshold,
    "reboots": check_reboots,
    "all_active": check_all_active,
    "final_states": check_final_states,
    "frames": check_frames,
    "overlap": check_overlap,
    "command_deferred": check_command_deferred,
    "acquires_after_replace": check_acquires_after_replace,
    "telemetry_after_reboot": check_telemetry_after_reboot,
    "imaging_succeeded": check_imaging_succeeded,
}


def evaluate(expect: Dict[str, Any], result) -> List[str]:
    """Failure messages, one per failed check, in the order the scenario lists them."""
    failures = []
    for name, expected in expect.items():
        try:
            message = CHECKS[name](result, expected)
        except (KeyError, TypeError, ValueError) as exc:
            message = f"cannot evaluate: {exc!r}"
        if message is not None:
            failures.append(f"{name}: {message}")
    return failures
