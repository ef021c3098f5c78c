import struct

from cubesat_fsw.canbus.can_sim import COMMAND, WAKE_UP, FailureMode, device_id_for, reassemble, standard_response
from cubesat_fsw.codec.telemetry_codec import SYNC, TelecommandPacket, crc16, decode_frame, encode_packet
from cubesat_fsw.core.lifecycle import LifecycleState
from cubesat_fsw.core.messages import (
    DownlinkRequest,
    FrameType,
    ImageTask,
    MaintenanceCommand,
    PacketType,
    RecordStatus,
    Telecommand,
)
from cubesat_fsw.core.timeline import EventKind
from cubesat_fsw.nodes.base import NodeSpec
from cubesat_fsw.nodes.image_store import synthetic_pixels
from cubesat_fsw.nodes.payload import CanEnabledPayloadNode
from cubesat_fsw.system import FlightSystem, SystemSettings

CORE = [
    NodeSpec("timing", "timing"),
    NodeSpec("can_switch", "can_switch"),
    NodeSpec("ttc", "ttc"),
    NodeSpec("maintenance", "maintenance"),
]
PAYLOADS = [NodeSpec(f"payload{n}", "payload") for n in (1, 2, 3)]


def make_system(*extra, **settings):
    system = FlightSystem(CORE + PAYLOADS + list(extra), SystemSettings(**settings))
    system.start()
    return system


def uplink_at(system, at, packet_type, args=b"", target=0):
    packet = encode_packet(TelecommandPacket(packet_type, target, args))
    system.kernel.schedule_at(at, system.uplink, packet)


def maintenance(system, at, command):
    uplink_at(system, at, command.packet_type, command.to_args())


def log_rows(system, node, text, **fields):
    return system.timeline.select(EventKind.LOG, node=node, text=text, **fields)


def test_switch_grants_in_rotation_one_per_tick():
    system = make_system()
    system.run_until(3_500_000)
    grants = system.timeline.select(EventKind.GRANT, node="can_switch")
    assert [g.fields["target"] for g in grants] == ["payload1", "payload2", "payload3"]
    assert [g.time for g in grants] == [1_000_100, 2_000_100, 3_000_100]


def test_blocked_tick_keeps_the_next_payload_in_line():
    system = make_system()
    system.node("payload2").delay_bus_usage(1_500_000)
    system.run_until(4_500_000)
    grants = system.timeline.select(EventKind.GRANT, node="can_switch")
    assert [g.fields["target"] for g in grants] == ["payload1", "payload2", "payload3"]
    assert grants[-1].time == 4_000_100
    blocked = log_rows(system, "can_switch", "blocked")
    assert len(blocked) == 1
    assert blocked[0].fields["owner"] == "payload2"


def test_payload_cycle_stores_the_device_body_at_the_ttc():
    system = make_system()
    system.run_until(1_500_000)
    runs = [e.detail.split()[1] for e in system.timeline.select(EventKind.STATE_CHANGE, node="payload1", text="run")]
    assert runs[:3] == ["off->occupying_can", "occupying_can->data_processing", "data_processing->other_async_commands"]
    released = system.timeline.select(EventKind.STATE_CHANGE, node="payload1",
                                      text="run occupying_can->data_processing")
    assert released[0].time == 1_025_200
    record = system.node("ttc").records[(1, 1)]
    assert record.status is RecordStatus.OK
    assert record.data == standard_response(device_id_for(1))[:-2]
    assert record.stored_at == 1_425_300


def test_silent_device_yields_a_no_response_record():
    system = make_system()
    system.can_bus.devices[device_id_for(1)].failure_mode = FailureMode.SILENT
    system.run_until(1_600_000)
    assert system.node("ttc").records[(1, 1)].status is RecordStatus.NO_RESPONSE


def test_telecommand_waits_for_the_next_grant():
    system = make_system()
    uplink_at(system, 1_500_000, PacketType.PAYLOAD_COMMAND, b"\x0a\x0b", target=1)
    system.run_until(4_500_000)
    assert log_rows(system, "payload1", "command-queued", cycle=1)
    executed = log_rows(system, "payload1", "command-executed")
    assert len(executed) == 1
    assert executed[0].fields["received_cycle"] == "1"
    assert executed[0].fields["cycle"] == "4"
    assert executed[0].time == 4_000_200


def test_ttc_rejects_bad_uplinks():
    system = make_system()
    system.run_until(10)
    good = encode_packet(TelecommandPacket(PacketType.PAYLOAD_COMMAND, 1, b"\x01"))
    system.uplink(good[:-1] + bytes([good[-1] ^ 0xFF]))
    body = bytes([0x7F, 0, 0, 0])
    system.uplink(SYNC + body + struct.pack(">H", crc16(body)))
    assert log_rows(system, "ttc", "uplink-crc-error")
    assert log_rows(system, "ttc", "uplink-unknown-type", type="0x7f")


def test_downlink_frames_the_stored_records():
    system = make_system()
    uplink_at(system, 3_500_000, PacketType.DOWNLINK, DownlinkRequest(FrameType.TELEMETRY, 1, 3).to_args())
    system.run_until(3_600_000)
    assert len(system.downlink.frames) == 1
    frame = decode_frame(system.downlink.frames[0])
    assert frame.frame_type is FrameType.TELEMETRY
    assert [(r.payload_id, r.cycle) for r in frame.records] == [(1, 1), (2, 2), (3, 3)]
    assert system.timeline.select(EventKind.FRAME_OUT, node="ttc", records=3)


def test_parameter_command_changes_a_running_node():
    system = make_system()
    maintenance(system, 10, MaintenanceCommand.parameter("payload1", "poll_delay_ms", 30))
    maintenance(system, 20, MaintenanceCommand.parameter("payload1", "no_such_key", 1))
    system.run_until(1_000)
    assert system.node("payload1").param("poll_delay_ms") == 30
    assert system.current_state("payload1") is LifecycleState.ACTIVE
    assert log_rows(system, "maintenance", "maintenance-failed", reason="unknown-parameter")


def test_replace_is_validated_before_anything_is_touched():
    system = make_system()
    maintenance(system, 10, MaintenanceCommand.replace("payload1", "no_such_behavior"))
    maintenance(system, 20, MaintenanceCommand.replace("payload1", "timing"))
    maintenance(system, 30, MaintenanceCommand.replace("payload9", "payload"))
    system.run_until(1_000)
    reasons = [e.fields["reason"] for e in log_rows(system, "maintenance", "maintenance-failed")]
    assert reasons == ["unknown-behavior", "behavior-kind-mismatch", "unknown-node"]
    assert system.current_state("payload1") is LifecycleState.ACTIVE


def test_replace_holds_and_replays_telecommands():
    system = make_system()
    maintenance(system, 10, MaintenanceCommand.replace("payload3", "can_enabled_v2"))
    uplink_at(system, 500_000, PacketType.PAYLOAD_COMMAND, b"\x05", target=3)
    system.run_until(3_000_000)
    assert isinstance(system.node("payload3"), CanEnabledPayloadNode)
    assert system.spec_of("payload3").behavior == "can_enabled_v2"
    assert system.current_state("payload3") is LifecycleState.ACTIVE
    assert log_rows(system, "maintenance", "telecommand-held", target="payload3")
    done = log_rows(system, "maintenance", "replace-done", target="payload3", replayed=1)
    assert done
    queued = log_rows(system, "payload3", "command-queued")
    assert queued and queued[-1].time > done[0].time
    assert not system.timeline.select(EventKind.RESTART)


def test_can_disabled_payload_never_acquires():
    system = make_system()
    system.specs["payload1"] = system.specs["payload1"].with_behavior("can_disabled")
    system.spawn("payload1")
    system.run_until(1_500_000)
    assert not system.timeline.select(EventKind.ACQUIRE, node="payload1")
    assert log_rows(system, "payload1", "can-unavailable", cycle=1)


IMAGING = [NodeSpec("camera", "image_acquisition"), NodeSpec("image_proc", "image_processing")]


def test_stale_imaging_task_is_rejected():
    system = make_system(*IMAGING)
    uplink_at(system, 1_000_000, PacketType.IMAGING, ImageTask(500_000, "checksum").to_bytes())
    system.run_until(1_100_000)
    assert log_rows(system, "camera", "task-rejected", reason="stale-task")
    assert log_rows(system, "ttc", "imaging-failed", stage="acquire", reason="stale-task")


def test_unknown_processing_method_fails_the_task():
    system = make_system(*IMAGING)
    uplink_at(system, 1_000_000, PacketType.IMAGING, ImageTask(1_100_000, "mean8").to_bytes())
    system.run_until(2_000_000)
    assert log_rows(system, "image_proc", "goal-rejected", reason="unknown-method")
    assert log_rows(system, "ttc", "imaging-failed", stage="process", reason="unknown-method")
    assert system.node("ttc").images == {}


def test_v2_processing_adds_mean8():
    system = make_system(NodeSpec("camera", "image_acquisition"),
                         NodeSpec("image_proc", "image_processing_v2"), seed=3)
    uplink_at(system, 1_000_000, PacketType.IMAGING, ImageTask(1_100_000, "mean8").to_bytes())
    system.run_until(2_000_000)
    info = system.node("ttc").images[1]
    pixels = synthetic_pixels(3, 1, 64, 64)
    assert info.method_id == "mean8"
    assert info.result_bytes == bytes([sum(pixels) // len(pixels)])


def test_telecommand_for_another_payload_is_ignored():
    system = make_system()
    system.run_until(10)
    system.bus.publish("ttc", "/telecommand", Telecommand(2, b"\x01").to_bytes())
    system.run_until(1_000)
    assert not log_rows(system, "payload1", "command-queued")
    assert log_rows(system, "payload2", "command-queued")


def test_long_command_goes_out_in_full_over_several_frames():
    command = bytes(range(0x10, 0x20))
    system = make_system()
    uplink_at(system, 1_500_000, PacketType.PAYLOAD_COMMAND, command, target=1)
    system.run_until(4_500_000)
    executed = log_rows(system, "payload1", "command-executed")
    assert executed[0].fields["size"] == "16"
    assert executed[0].fields["frames"] == "3"
    device = device_id_for(1)
    frames = [f for f in system.can_bus.sent
              if f.arbitration_id == device and bytes(f.data) != bytes([WAKE_UP])]
    assert [f.dlc for f in frames] == [8, 8, 1]
    assert reassemble(frames) == bytes([COMMAND]) + command


def test_payload_busy_at_its_grant_gets_the_next_one():
    slow = NodeSpec("payload1", "payload", {"processing_delay_us": 3_500_000})
    system = FlightSystem(CORE + [slow] + PAYLOADS[1:], SystemSettings())
    system.start()
    system.run_until(7_500_000)
    missed = log_rows(system, "payload1", "grant-missed")
    assert [row.fields["cycle"] for row in missed] == ["4"]
    assert missed[0].fields["state"] == "data_processing"
    grants = system.timeline.select(EventKind.GRANT, node="can_switch", target="payload1")
    assert [g.time for g in grants] == [1_000_100, 4_000_100, 7_000_100]
    acquires = system.timeline.select(EventKind.ACQUIRE, node="payload1")
    assert len(acquires) == 2
    assert acquires[1].time > 7_000_100
    assert (1, 1) in system.node("ttc").records


def test_processing_node_killed_mid_goal_aborts_the_task():
    system = make_system(*IMAGING)
    uplink_at(system, 1_000_000, PacketType.IMAGING, ImageTask(1_100_000, "checksum").to_bytes())
    system.kernel.schedule_at(1_300_000, system.kill_node, "image_proc")
    uplink_at(system, 2_000_000, PacketType.DOWNLINK, DownlinkRequest(FrameType.IMAGE, 0, 10).to_args())
    system.run_until(2_100_000)
    assert log_rows(system, "ttc", "imaging-failed", stage="process", reason="server-lost")
    assert not log_rows(system, "ttc", "imaging-succeeded")
    assert not system.timeline.select(EventKind.PUBLISH, node="image_proc")
    assert system.node("ttc").images == {}
    frame = decode_frame(system.downlink.frames[0])
    assert frame.frame_type is FrameType.IMAGE
    assert frame.records == ()
