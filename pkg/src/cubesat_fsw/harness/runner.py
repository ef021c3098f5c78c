"""
Runs a scenario: builds the flight system, schedules uplinks and fault injections,
advances the kernel to the end of the run, then writes the artifacts.

    <out>/timeline.csv   every timeline row
    <out>/stats.csv      delivery latency per topic
    <out>/downlink.bin   concatenated downlink frames
    <out>/images/        image store (raw pixels plus index.json)
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

from cubesat_fsw.canbus.can_sim import device_id_for
from cubesat_fsw.core.sim_kernel import ClockMode, SimKernel, WallClockKernel
from cubesat_fsw.core.timeline import EventKind, Timeline, export_timeline
from cubesat_fsw.harness.checks import evaluate
from cubesat_fsw.harness.scenario import FaultInjection, FaultKind, Scenario, UplinkSpec
from cubesat_fsw.harness.stats import LatencyStats, stats_by_name, write_stats_csv
from cubesat_fsw.system import GROUND_NODE, FlightSystem, SystemSettings
from cubesat_fsw.utils.logger import log_event

HARNESS_NODE = "harness"


@dataclass
class RunResult:
    scenario: Scenario
    system: FlightSystem
    end_time: int
    stats: List[LatencyStats] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)
    out_dir: Optional[Path] = None

    @property
    def timeline(self) -> Timeline:
        return self.system.timeline

    @property
    def downlink(self) -> bytes:
        return self.system.downlink.to_bytes()

    @property
    def passed(self) -> bool:
        return not self.failures


def build_system(scenario: Scenario, seed: Optional[int] = None,
                 image_dir: Optional[Union[str, Path]] = None) -> FlightSystem:
    seed = scenario.seed if seed is None else seed
    settings = SystemSettings(
        scenario=scenario.name,
        seed=seed,
        period_us=scenario.period_us,
        base_delay_us=scenario.base_delay_us,
        jitter_bound_us=scenario.jitter_bound_us,
        probe_threshold=scenario.probe_threshold,
        probe_timeout_us=scenario.probe_timeout_us,
        respawn_delay_us=scenario.respawn_delay_us,
        watchdog_enabled=scenario.watchdog_enabled,
        watchdog_timeout_us=scenario.watchdog_timeout_us,
        watchdog_check_us=scenario.watchdog_check_us,
        ring=list(scenario.ring),
        initially_down=list(scenario.initially_down),
        image_dir=str(image_dir) if image_dir is not None else None,
    )
    kernel = WallClockKernel(seed) if scenario.clock_mode is ClockMode.WALL_CLOCK else SimKernel(seed)
    numbers = scenario.payload_numbers
    devices = []
    for entry in scenario.payloads:
        if entry.device is not None:
            device_id = int(entry.params.get("device_id") or 0) or device_id_for(numbers[entry.node_id])
            devices.append(entry.device.model(device_id))
    return FlightSystem([entry.spec() for entry in scenario.roster], settings, devices, kernel)


def run_scenario(scenario: Scenario, seed: Optional[int] = None,
                 out_dir: Optional[Union[str, Path]] = None) -> RunResult:
    out_path = Path(out_dir) if out_dir is not None else None
    system = build_system(scenario, seed, image_dir=out_path / "images" if out_path else None)
    log_event("RUN_START", scenario=scenario.name, seed=system.settings.seed,
              mode=scenario.clock_mode.value, duration_us=scenario.duration_us)

    system.start()
    # faults first so a corrupt_uplink hits an uplink due at the same instant
    for fault in scenario.faults:
        system.kernel.schedule_at(fault.at_us, _inject, system, fault)
    numbers = scenario.payload_numbers
    for uplink in scenario.uplinks:
        system.kernel.schedule_at(uplink.at_us, _send_uplink, system, uplink, uplink.packet(numbers))
    system.run_until(scenario.duration_us)
    end_time = system.kernel.now()
    system.kernel.close()

    samples = system.bus.latency_samples
    result = RunResult(scenario, system, end_time, stats=stats_by_name(samples))
    result.failures = evaluate(scenario.expect, result)
    if out_path is not None:
        write_artifacts(result, out_path)
    level = logging.INFO if result.passed else logging.WARNING
    log_event("RUN_COMPLETE" if result.passed else "RUN_CHECKS_FAILED", level=level, scenario=scenario.name,
              rows=len(system.timeline), failures=result.failures)
    return result


def write_artifacts(result: RunResult, out_dir: Path) -> None:
    result.out_dir = out_dir
    export_timeline(result.timeline, out_dir / "timeline.csv")
    write_stats_csv(result.stats, out_dir / "stats.csv")
    result.system.downlink.write(out_dir / "downlink.bin")


def _send_uplink(system: FlightSystem, uplink: UplinkSpec, packet: bytes) -> None:
    system.timeline.record(GROUND_NODE, EventKind.LOG, "uplink", type=uplink.kind, size=len(packet))
    system.uplink(packet)


def _inject(system: FlightSystem, fault: FaultInjection) -> None:
    system.timeline.record(HARNESS_NODE, EventKind.LOG, "fault", kind=fault.kind.value,
                           target=fault.target or "-")
    log_event("FAULT_INJECTED", level=logging.WARNING, kind=fault.kind.value, target=fault.target,
              sim_time_us=system.kernel.now())
    if fault.kind is FaultKind.CORRUPT_UPLINK:
        system.corrupt_next_uplink = True
        return
    node = system.node(fault.target)
    if node is None or not node.alive:
        system.timeline.record(HARNESS_NODE, EventKind.LOG, "fault-skipped", target=fault.target,
                               reason="not-running")
        return
    if fault.kind is FaultKind.KILL_NODE:
        system.kill_node(fault.target)
    elif fault.kind is FaultKind.DELAY_BUS_USAGE:
        node.delay_bus_usage(fault.extra_us)
    elif fault.kind is FaultKind.DROP_PROBE:
        node.drop_probes(fault.count)
    elif fault.kind is FaultKind.STOP_WATCHDOG_FEEDING:
        node.stop_feeding()
