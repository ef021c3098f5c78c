"""
Scenario files: YAML documents describing one run.

Loading never stops at the first problem. Every violation found is collected and
raised together in one ScenarioValidationError so a scenario can be fixed in one pass.
See docs/SCENARIOS.md for the schema.
"""
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from cubesat_fsw.canbus.can_sim import MAX_ID, DeviceModel, FailureMode
from cubesat_fsw.codec.telemetry_codec import TelecommandPacket, encode_packet
from cubesat_fsw.config import Config
from cubesat_fsw.core.messages import (
    DownlinkRequest,
    FrameType,
    ImageTask,
    MaintenanceCommand,
    PacketType,
)
from cubesat_fsw.core.sim_kernel import ClockMode
from cubesat_fsw.harness.checks import CHECKS
from cubesat_fsw.nodes.base import NodeSpec
from cubesat_fsw.nodes.registry import behavior_kind
from cubesat_fsw.utils.error_handling import ArtifactIOError, ScenarioValidationError, UnknownBehaviorError

# payload numbers travel as one byte in telecommands and telemetry records
MAX_PAYLOAD_ID = 0xFF

DEFAULT_NODES = [
    {"id": "timing", "behavior": "timing"},
    {"id": "can_switch", "behavior": "can_switch"},
    {"id": "ttc", "behavior": "ttc"},
    {"id": "maintenance", "behavior": "maintenance"},
]

UPLINK_TYPES = {
    "downlink": PacketType.DOWNLINK,
    "payload_command": PacketType.PAYLOAD_COMMAND,
    "imaging": PacketType.IMAGING,
    "parameter": PacketType.PARAMETER,
    "replace": PacketType.NODE_REPLACE,
    "raw": None,
}

_UPLINK_FIELDS = {
    "downlink": ["cycle_start", "cycle_end"],
    "payload_command": ["target"],
    "imaging": ["capture_time_us", "method"],
    "parameter": ["node", "key", "value"],
    "replace": ["node", "behavior"],
    "raw": ["hex"],
}


class FaultKind(str, Enum):
    KILL_NODE = "kill_node"
    DELAY_BUS_USAGE = "delay_bus_usage"
    DROP_PROBE = "drop_probe"
    STOP_WATCHDOG_FEEDING = "stop_watchdog_feeding"
    CORRUPT_UPLINK = "corrupt_uplink"


@dataclass
class DeviceSpec:
    response_delay_us: int = Config.DEVICE_RESPONSE_DELAY_US
    failure_mode: FailureMode = FailureMode.NONE
    response_hex: str = ""
    device_id: int = 0

    def model(self, device_id: int) -> DeviceModel:
        return DeviceModel(self.device_id or device_id, self.response_delay_us,
                           bytes.fromhex(self.response_hex), self.failure_mode)


@dataclass
class NodeEntry:
    node_id: str
    behavior: str
    params: Dict[str, Any] = field(default_factory=dict)
    device: Optional[DeviceSpec] = None

    def spec(self) -> NodeSpec:
        return NodeSpec(self.node_id, self.behavior, dict(self.params))


@dataclass
class UplinkSpec:
    at_us: int
    kind: str
    fields: Dict[str, Any] = field(default_factory=dict)

    def packet(self, payload_numbers: Dict[str, int]) -> bytes:
        """Encoded telecommand packet; payload ids in `target` are mapped to payload numbers."""
        if self.kind == "raw":
            return bytes.fromhex(self.fields["hex"])
        f = self.fields
        target = f.get("target", 0)
        if isinstance(target, str):
            target = payload_numbers[target]
        if self.kind == "downlink":
            frame_type = FrameType(int(f.get("frame_type", FrameType.TELEMETRY)))
            args = DownlinkRequest(frame_type, int(f["cycle_start"]), int(f["cycle_end"])).to_args()
        elif self.kind == "payload_command":
            args = bytes.fromhex(str(f.get("command", "")))
        elif self.kind == "imaging":
            args = ImageTask(int(f["capture_time_us"]), str(f["method"]),
                             bytes.fromhex(str(f.get("exposure", "")))).to_bytes()
        elif self.kind == "parameter":
            args = MaintenanceCommand.parameter(f["node"], f["key"], f["value"]).to_args()
        else:
            args = MaintenanceCommand.replace(f["node"], f["behavior"]).to_args()
        return encode_packet(TelecommandPacket(UPLINK_TYPES[self.kind], int(target), args))


@dataclass
class FaultInjection:
    kind: FaultKind
    at_us: int
    target: str = ""
    extra_us: int = 0
    count: int = 0


@dataclass
class Scenario:
    name: str
    seed: int = Config.DEFAULT_SEED
    clock_mode: ClockMode = ClockMode.DETERMINISTIC
    period_us: int = Config.TIMING_PERIOD_US
    duration_us: int = 10 * Config.TIMING_PERIOD_US
    base_delay_us: int = Config.BASE_DELAY_US
    jitter_bound_us: int = Config.JITTER_BOUND_US
    payloads: List[NodeEntry] = field(default_factory=list)
    nodes: List[NodeEntry] = field(default_factory=list)
    ring: List[str] = field(default_factory=list)
    initially_down: List[str] = field(default_factory=list)
    probe_threshold: int = Config.PROBE_THRESHOLD
    probe_timeout_us: Optional[int] = None
    respawn_delay_us: int = Config.RESPAWN_DELAY_US
    watchdog_enabled: bool = True
    watchdog_timeout_us: Optional[int] = None
    watchdog_check_us: int = Config.WATCHDOG_CHECK_US
    uplinks: List[UplinkSpec] = field(default_factory=list)
    faults: List[FaultInjection] = field(default_factory=list)
    expect: Dict[str, Any] = field(default_factory=dict)
    source: Optional[Path] = None

    @property
    def roster(self) -> List[NodeEntry]:
        """Non-payload nodes first so the timing and switch nodes exist before any payload."""
        return self.nodes + self.payloads

    @property
    def payload_numbers(self) -> Dict[str, int]:
        return {entry.node_id: index for index, entry in enumerate(self.payloads, start=1)}

    def node_ids(self) -> List[str]:
        return [entry.node_id for entry in self.roster]


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read scenario {path}: {exc}") from exc
    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioValidationError([f"{path}: not valid YAML: {exc}"]) from exc
    scenario = parse_scenario(document, default_name=path.stem)
    scenario.source = path
    return scenario


def parse_scenario(document: Any, default_name: str = "adhoc") -> Scenario:
    if not isinstance(document, dict):
        raise ScenarioValidationError(["scenario must be a mapping"])
    parser = _Parser(document)
    scenario = parser.build(default_name)
    if parser.violations:
        raise ScenarioValidationError(parser.violations)
    return scenario


class _Parser:
    def __init__(self, document: Dict[str, Any]):
        self.doc = document
        self.violations: List[str] = []

    def fail(self, message: str) -> None:
        self.violations.append(message)

    def integer(self, mapping: Dict[str, Any], key: str, default: Optional[int], where: str,
                minimum: int = 0) -> Optional[int]:
        value = mapping.get(key, default)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(f"{where}.{key}: expected an integer, got {value!r}")
            return default
        if value < minimum:
            self.fail(f"{where}.{key}: must be >= {minimum}, got {value}")
        return value

    def mapping(self, value: Any, where: str) -> Dict[str, Any]:
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail(f"{where}: expected a mapping")
            return {}
        return value

    def sequence(self, value: Any, where: str) -> List[Any]:
        if value is None:
            return []
        if not isinstance(value, list):
            self.fail(f"{where}: expected a list")
            return []
        return value

    def build(self, default_name: str) -> Scenario:
        doc = self.doc
        known = {"name", "seed", "clock_mode", "period_us", "duration_us", "delivery", "payloads", "nodes",
                 "ring", "initially_down", "fault_tolerance", "watchdog", "uplinks", "faults", "expect"}
        for key in sorted(set(doc) - known):
            self.fail(f"unknown field {key!r}")

        name = doc.get("name", default_name)
        if not isinstance(name, str) or not name or any(ch.isspace() for ch in name):
            self.fail(f"name: expected a single word, got {name!r}")
            name = default_name
        try:
            clock_mode = ClockMode(doc.get("clock_mode", ClockMode.DETERMINISTIC.value))
        except ValueError:
            self.fail(f"clock_mode: must be one of {[mode.value for mode in ClockMode]}")
            clock_mode = ClockMode.DETERMINISTIC

        scenario = Scenario(
            name=name,
            seed=self.integer(doc, "seed", Config.DEFAULT_SEED, "scenario"),
            clock_mode=clock_mode,
            period_us=self.integer(doc, "period_us", Config.TIMING_PERIOD_US, "scenario", minimum=1),
            duration_us=self.integer(doc, "duration_us", 10 * Config.TIMING_PERIOD_US, "scenario", minimum=1),
        )
        delivery = self.mapping(doc.get("delivery"), "delivery")
        scenario.base_delay_us = self.integer(delivery, "base_delay_us", Config.BASE_DELAY_US, "delivery")
        scenario.jitter_bound_us = self.integer(delivery, "jitter_bound_us", Config.JITTER_BOUND_US, "delivery")

        scenario.nodes = self.node_entries(doc.get("nodes", DEFAULT_NODES), "nodes", payload=False)
        scenario.payloads = self.node_entries(doc.get("payloads"), "payloads", payload=True)
        if not scenario.payloads:
            self.fail("payloads: at least one payload node is required")
        elif len(scenario.payloads) > MAX_PAYLOAD_ID:
            self.fail(f"payloads: at most {MAX_PAYLOAD_ID} payload nodes, got {len(scenario.payloads)}")
        ids = scenario.node_ids()
        for node_id in sorted({i for i in ids if ids.count(i) > 1}):
            self.fail(f"node id {node_id!r} is defined more than once")
        kinds = [self.kind_of(entry.behavior) for entry in scenario.nodes]
        for kind in ("timing", "can_switch"):
            if kinds.count(kind) > 1:
                self.fail(f"nodes: at most one {kind} node")

        self.fault_tolerance(scenario)
        self.id_references(scenario)
        scenario.uplinks = [self.uplink(raw, f"uplinks[{i}]", scenario)
                            for i, raw in enumerate(self.sequence(doc.get("uplinks"), "uplinks"))]
        scenario.faults = [fault for fault in (self.fault(raw, f"faults[{i}]", scenario)
                                               for i, raw in enumerate(self.sequence(doc.get("faults"), "faults")))
                           if fault is not None]
        scenario.expect = self.mapping(doc.get("expect"), "expect")
        for key in sorted(set(scenario.expect) - set(CHECKS)):
            self.fail(f"expect.{key}: unknown check (known: {', '.join(sorted(CHECKS))})")
        return scenario

    def kind_of(self, behavior: str) -> Optional[str]:
        try:
            return behavior_kind(behavior)
        except UnknownBehaviorError:
            return None

    def node_entries(self, raw: Any, where: str, payload: bool) -> List[NodeEntry]:
        entries = []
        for index, item in enumerate(self.sequence(raw, where)):
            here = f"{where}[{index}]"
            item = self.mapping(item, here)
            node_id = item.get("id")
            if not isinstance(node_id, str) or not node_id or any(ch.isspace() for ch in node_id):
                self.fail(f"{here}.id: expected a node id, got {node_id!r}")
                continue
            behavior = item.get("behavior", "payload" if payload else None)
            kind = self.kind_of(behavior) if isinstance(behavior, str) else None
            if kind is None:
                self.fail(f"{here}.behavior: unknown behaviour {behavior!r}")
            elif payload and kind != "payload":
                self.fail(f"{here}.behavior: {behavior!r} is not a payload behaviour")
            elif not payload and kind == "payload":
                self.fail(f"{here}.behavior: payload {behavior!r} belongs under payloads")
            params = dict(self.mapping(item.get("params"), f"{here}.params"))
            if payload and "payload_id" in params:
                payload_id = self.integer(params, "payload_id", None, f"{here}.params", minimum=1)
                if payload_id is not None and payload_id > MAX_PAYLOAD_ID:
                    self.fail(f"{here}.params.payload_id: must be <= {MAX_PAYLOAD_ID}, got {payload_id}")
            device = None
            if payload:
                device = self.device(self.mapping(item.get("device"), f"{here}.device"), f"{here}.device")
            entries.append(NodeEntry(node_id, behavior if isinstance(behavior, str) else "", params, device))
        return entries

    def device(self, raw: Dict[str, Any], where: str) -> DeviceSpec:
        spec = DeviceSpec(
            response_delay_us=self.integer(raw, "response_delay_us", Config.DEVICE_RESPONSE_DELAY_US, where),
            device_id=self.integer(raw, "device_id", 0, where),
        )
        if spec.device_id > MAX_ID:
            self.fail(f"{where}.device_id: {spec.device_id:#x} is not an 11-bit id")
        try:
            spec.failure_mode = FailureMode(raw.get("failure_mode", FailureMode.NONE.value))
        except ValueError:
            self.fail(f"{where}.failure_mode: must be one of {[mode.value for mode in FailureMode]}")
        response_hex = raw.get("response_hex", "")
        try:
            bytes.fromhex(str(response_hex))
            spec.response_hex = str(response_hex)
        except ValueError:
            self.fail(f"{where}.response_hex: not a hex string")
        return spec

    def fault_tolerance(self, scenario: Scenario) -> None:
        ft = self.mapping(self.doc.get("fault_tolerance"), "fault_tolerance")
        scenario.probe_threshold = self.integer(ft, "probe_threshold", Config.PROBE_THRESHOLD, "fault_tolerance",
                                                minimum=1)
        scenario.probe_timeout_us = self.integer(ft, "probe_timeout_us", None, "fault_tolerance", minimum=1)
        scenario.respawn_delay_us = self.integer(ft, "respawn_delay_us", Config.RESPAWN_DELAY_US,
                                                 "fault_tolerance")
        watchdog = self.mapping(self.doc.get("watchdog"), "watchdog")
        enabled = watchdog.get("enabled", True)
        if not isinstance(enabled, bool):
            self.fail("watchdog.enabled: expected true or false")
            enabled = True
        scenario.watchdog_enabled = enabled
        scenario.watchdog_timeout_us = self.integer(watchdog, "timeout_us", None, "watchdog", minimum=1)
        scenario.watchdog_check_us = self.integer(watchdog, "check_us", Config.WATCHDOG_CHECK_US, "watchdog",
                                                  minimum=1)

    def id_references(self, scenario: Scenario) -> None:
        payload_ids = [entry.node_id for entry in scenario.payloads]
        ring = self.sequence(self.doc.get("ring"), "ring")
        for node_id in ring:
            if node_id not in payload_ids:
                self.fail(f"ring: {node_id!r} is not a payload node")
        if ring and len(set(ring)) != len(ring):
            self.fail("ring: a node appears more than once")
        if len(ring) == 1:
            self.fail("ring: needs at least two nodes")
        scenario.ring = [str(node_id) for node_id in ring]
        down = self.sequence(self.doc.get("initially_down"), "initially_down")
        for node_id in down:
            if node_id not in scenario.node_ids():
                self.fail(f"initially_down: {node_id!r} is not defined")
        scenario.initially_down = [str(node_id) for node_id in down]

    def at_time(self, raw: Dict[str, Any], where: str, scenario: Scenario) -> int:
        at = self.integer(raw, "at_us", None, where)
        if at is None:
            self.fail(f"{where}.at_us: required")
            return 0
        if at > scenario.duration_us:
            self.fail(f"{where}.at_us: {at} is after the end of the run ({scenario.duration_us})")
        return at

    def uplink(self, raw: Any, where: str, scenario: Scenario) -> UplinkSpec:
        raw = self.mapping(raw, where)
        at = self.at_time(raw, where, scenario)
        kind = raw.get("type")
        if kind not in UPLINK_TYPES:
            self.fail(f"{where}.type: must be one of {sorted(UPLINK_TYPES)}, got {kind!r}")
            return UplinkSpec(at, "raw", {"hex": ""})
        fields = {key: value for key, value in raw.items() if key not in ("at_us", "type")}
        for key in _UPLINK_FIELDS[kind]:
            if key not in fields:
                self.fail(f"{where}.{key}: required for {kind} uplinks")
        target = fields.get("target")
        numbers = scenario.payload_numbers
        if isinstance(target, str) and target not in numbers:
            self.fail(f"{where}.target: {target!r} is not a payload node")
        elif isinstance(target, int) and kind == "payload_command" and not 1 <= target <= len(numbers):
            self.fail(f"{where}.target: payload number {target} is not defined")
        if kind in ("parameter", "replace") and fields.get("node") not in scenario.node_ids():
            self.fail(f"{where}.node: {fields.get('node')!r} is not defined")
        # unknown replacement behaviours are left to the maintenance node to reject
        uplink = UplinkSpec(at, kind, fields)
        if not any(v.startswith(where) for v in self.violations):
            try:
                uplink.packet(numbers)
            except (ValueError, KeyError, TypeError, struct.error) as exc:
                self.fail(f"{where}: cannot encode packet: {exc}")
        return uplink

    def fault(self, raw: Any, where: str, scenario: Scenario) -> Optional[FaultInjection]:
        raw = self.mapping(raw, where)
        try:
            kind = FaultKind(raw.get("kind"))
        except ValueError:
            self.fail(f"{where}.kind: must be one of {[k.value for k in FaultKind]}, got {raw.get('kind')!r}")
            return None
        fault = FaultInjection(kind, self.at_time(raw, where, scenario), str(raw.get("target", "")))
        payload_ids = [entry.node_id for entry in scenario.payloads]
        if kind is FaultKind.CORRUPT_UPLINK:
            return fault
        if kind is FaultKind.STOP_WATCHDOG_FEEDING and not fault.target:
            timing = [e.node_id for e in scenario.nodes if self.kind_of(e.behavior) == "timing"]
            fault.target = timing[0] if timing else ""
        if fault.target not in scenario.node_ids():
            self.fail(f"{where}.target: {fault.target!r} is not defined")
        elif kind in (FaultKind.DELAY_BUS_USAGE, FaultKind.DROP_PROBE) and fault.target not in payload_ids:
            self.fail(f"{where}.target: {kind.value} needs a payload node, got {fault.target!r}")
        elif (kind is FaultKind.STOP_WATCHDOG_FEEDING
              and self.kind_of(self.behavior_of(scenario, fault.target)) != "timing"):
            self.fail(f"{where}.target: stop_watchdog_feeding needs the timing node, got {fault.target!r}")
        if kind is FaultKind.DELAY_BUS_USAGE:
            fault.extra_us = self.integer(raw, "extra_us", None, where, minimum=1) or 0
            if "extra_us" not in raw:
                self.fail(f"{where}.extra_us: required for delay_bus_usage")
        if kind is FaultKind.DROP_PROBE:
            fault.count = self.integer(raw, "count", None, where, minimum=1) or 0
            if "count" not in raw:
                self.fail(f"{where}.count: required for drop_probe")
        return fault

    @staticmethod
    def behavior_of(scenario: Scenario, node_id: str) -> str:
        for entry in scenario.roster:
            if entry.node_id == node_id:
                return entry.behavior
        return ""
