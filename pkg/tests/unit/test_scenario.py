from pathlib import Path

import pytest
import yaml

from cubesat_fsw.codec.telemetry_codec import decode_packet
from cubesat_fsw.core.messages import PacketType, Telecommand
from cubesat_fsw.harness.scenario import FaultKind, load_scenario, parse_scenario
from cubesat_fsw.utils.error_handling import ArtifactIOError, ScenarioValidationError

SCENARIO_DIR = Path(__file__).resolve().parents[2] / "scenarios"

BASE = {
    "name": "unit",
    "duration_us": 5_000_000,
    "payloads": [{"id": "payload1"}, {"id": "payload2"}, {"id": "payload3"}],
}


def violations_of(document):
    with pytest.raises(ScenarioValidationError) as excinfo:
        parse_scenario(document)
    return excinfo.value.violations


@pytest.mark.parametrize("path", sorted(SCENARIO_DIR.glob("*.yaml")), ids=lambda p: p.stem)
def test_bundled_scenarios_are_valid(path):
    scenario = load_scenario(path)
    assert scenario.name == path.stem
    assert scenario.expect


def test_defaults_fill_in_the_core_nodes():
    scenario = parse_scenario(dict(BASE))
    assert [entry.node_id for entry in scenario.roster] == [
        "timing", "can_switch", "ttc", "maintenance", "payload1", "payload2", "payload3"]
    assert scenario.payload_numbers == {"payload1": 1, "payload2": 2, "payload3": 3}
    assert scenario.ring == []


def test_every_violation_is_reported_at_once():
    document = dict(BASE, seed="one", bogus=1, ring=["payload1", "payload7"],
                    initially_down=["ghost"], expect={"no_such_check": 1})
    violations = violations_of(document)
    assert len(violations) == 5
    text = "\n".join(violations)
    for fragment in ("unknown field 'bogus'", "scenario.seed", "'payload7' is not a payload node",
                     "initially_down: 'ghost'", "expect.no_such_check"):
        assert fragment in text


def test_payload_section_is_required():
    assert any("at least one payload" in v for v in violations_of({"name": "x"}))


def test_duplicate_ids_and_wrong_sections():
    document = dict(BASE, payloads=[{"id": "payload1"}, {"id": "payload1"}, {"id": "sw", "behavior": "timing"}])
    text = "\n".join(violations_of(document))
    assert "'payload1' is defined more than once" in text
    assert "'timing' is not a payload behaviour" in text


def test_payload_numbers_must_fit_one_byte():
    crowded = dict(BASE, payloads=[{"id": f"payload{n}"} for n in range(1, 257)])
    assert any("at most 255 payload nodes, got 256" in v for v in violations_of(crowded))
    assert len(parse_scenario(dict(BASE, payloads=[{"id": f"payload{n}"} for n in range(1, 256)])).payloads) == 255
    numbered = dict(BASE, payloads=[{"id": "payload1", "params": {"payload_id": 256}},
                                    {"id": "payload2", "params": {"payload_id": 0}}])
    text = "\n".join(violations_of(numbered))
    assert "payloads[0].params.payload_id: must be <= 255, got 256" in text
    assert "payloads[1].params.payload_id: must be >= 1, got 0" in text


def test_uplink_checks():
    document = dict(BASE, uplinks=[
        {"at_us": 1_000, "type": "payload_command", "target": "payload9"},
        {"at_us": 9_000_000, "type": "downlink", "cycle_start": 1, "cycle_end": 2},
        {"at_us": 1_000, "type": "teleport"},
        {"at_us": 1_000, "type": "imaging", "method": "checksum"},
    ])
    text = "\n".join(violations_of(document))
    assert "uplinks[0].target: 'payload9'" in text
    assert "uplinks[1].at_us" in text
    assert "uplinks[2].type" in text
    assert "uplinks[3].capture_time_us: required" in text


def test_uplinks_encode_to_packets():
    scenario = parse_scenario(dict(BASE, uplinks=[
        {"at_us": 2_500_000, "type": "payload_command", "target": "payload2", "command": "0a0b"},
    ]))
    packet = decode_packet(scenario.uplinks[0].packet(scenario.payload_numbers))
    assert packet.packet_type is PacketType.PAYLOAD_COMMAND
    assert packet.target == 2
    assert Telecommand(packet.target, packet.args).command == b"\x0a\x0b"


def test_fault_checks():
    document = dict(BASE, faults=[
        {"kind": "explode", "at_us": 1},
        {"kind": "delay_bus_usage", "at_us": 1, "target": "ttc", "extra_us": 5},
        {"kind": "drop_probe", "at_us": 1, "target": "payload1"},
        {"kind": "stop_watchdog_feeding", "at_us": 1, "target": "payload1"},
    ])
    text = "\n".join(violations_of(document))
    assert "faults[0].kind" in text
    assert "faults[1].target: delay_bus_usage needs a payload node" in text
    assert "faults[2].count: required" in text
    assert "faults[3].target: stop_watchdog_feeding needs the timing node" in text


def test_watchdog_fault_defaults_to_the_timing_node():
    scenario = parse_scenario(dict(BASE, faults=[{"kind": "stop_watchdog_feeding", "at_us": 10}]))
    assert scenario.faults[0].kind is FaultKind.STOP_WATCHDOG_FEEDING
    assert scenario.faults[0].target == "timing"


def test_load_errors(tmp_path):
    with pytest.raises(ArtifactIOError):
        load_scenario(tmp_path / "missing.yaml")
    broken = tmp_path / "broken.yaml"
    broken.write_text("name: [unclosed\n")
    with pytest.raises(ScenarioValidationError):
        load_scenario(broken)


def test_name_defaults_to_the_file_stem(tmp_path):
    document = dict(BASE)
    del document["name"]
    path = tmp_path / "from_file.yaml"
    path.write_text(yaml.safe_dump(document))
    assert load_scenario(path).name == "from_file"
