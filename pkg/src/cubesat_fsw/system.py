"""
FlightSystem wires one simulated spacecraft computer together: kernel, bus, CAN bus,
node roster, watchdog, liveness ring and supervisor.

The roster is a list of NodeSpecs; instances come and go (restart, replacement,
reboot) but the NodeSpec under a node id is what the next instance is built from.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

from cubesat_fsw.canbus.can_sim import CanBus, DeviceModel, device_id_for
from cubesat_fsw.config import Config
from cubesat_fsw.core.lifecycle import LifecycleState, TransitionKind
from cubesat_fsw.core.message_bus import DeliveryModel, MessageBus
from cubesat_fsw.core.sim_kernel import SimKernel
from cubesat_fsw.core.timeline import EventKind, Timeline
from cubesat_fsw.fault.liveness import LivenessRing, default_ring
from cubesat_fsw.fault.supervisor import Supervisor
from cubesat_fsw.fault.watchdog import Watchdog
from cubesat_fsw.nodes.base import FlightNode, NodeContext, NodeSpec
from cubesat_fsw.nodes.image_store import ImageStore
from cubesat_fsw.nodes.registry import behavior_kind, create_node
from cubesat_fsw.nodes.ttc import DownlinkSink
from cubesat_fsw.utils.error_handling import LifecycleTransitionError, UnknownNodeError
from cubesat_fsw.utils.logger import log_event

SYSTEM_NODE = "system"
GROUND_NODE = "ground"


@dataclass
class SystemSettings:
    scenario: str = "adhoc"
    seed: int = Config.DEFAULT_SEED
    period_us: int = Config.TIMING_PERIOD_US
    base_delay_us: int = Config.BASE_DELAY_US
    jitter_bound_us: int = Config.JITTER_BOUND_US
    probe_threshold: int = Config.PROBE_THRESHOLD
    probe_timeout_us: Optional[int] = None
    respawn_delay_us: int = Config.RESPAWN_DELAY_US
    watchdog_enabled: bool = True
    watchdog_timeout_us: Optional[int] = None
    watchdog_check_us: int = Config.WATCHDOG_CHECK_US
    ring: List[str] = field(default_factory=list)
    initially_down: List[str] = field(default_factory=list)
    image_dir: Optional[str] = None

    @property
    def effective_probe_timeout(self) -> int:
        if self.probe_timeout_us is not None:
            return self.probe_timeout_us
        return Config.probe_timeout_us(self.period_us)

    @property
    def effective_watchdog_timeout(self) -> int:
        if self.watchdog_timeout_us is not None:
            return self.watchdog_timeout_us
        return Config.watchdog_timeout_us(self.period_us)


class FlightSystem:
    def __init__(self, specs: Sequence[NodeSpec], settings: Optional[SystemSettings] = None,
                 devices: Sequence[DeviceModel] = (), kernel: Optional[SimKernel] = None):
        self.settings = settings or SystemSettings()
        self.kernel = kernel or SimKernel(self.settings.seed)
        self.timeline = Timeline(self.kernel.now, self.settings.scenario, self.settings.seed,
                                 self.kernel.mode.value)
        self.bus = MessageBus(self.kernel, self.timeline,
                              DeliveryModel(self.settings.base_delay_us, self.settings.jitter_bound_us,
                                            self.settings.seed))
        self.specs: Dict[str, NodeSpec] = {}
        self.kinds: Dict[str, str] = {}
        payload_index = 0
        for spec in specs:
            if spec.node_id in self.specs:
                raise ValueError(f"duplicate node id {spec.node_id}")
            kind = behavior_kind(spec.behavior)
            if kind == "payload":
                payload_index += 1
                params = dict(spec.params)
                params.setdefault("payload_id", payload_index)
                spec = NodeSpec(spec.node_id, spec.behavior, params)
            elif kind == "timing":
                spec = NodeSpec(spec.node_id, spec.behavior,
                                {"period_us": self.settings.period_us, **spec.params})
            self.specs[spec.node_id] = spec
            self.kinds[spec.node_id] = kind

        self.can_bus = CanBus(self.kernel, self.timeline, slots=self.payloads)
        configured = {device.device_id: device for device in devices}
        for node_id in self.payloads:
            device_id = self.specs[node_id].params.get("device_id") or device_id_for(self.payload_id_of(node_id))
            self.can_bus.add_device(configured.get(device_id)
                                    or DeviceModel(device_id, Config.DEVICE_RESPONSE_DELAY_US))
        for device in configured.values():
            self.can_bus.add_device(device)

        self.downlink = DownlinkSink(self.timeline)
        self.image_store = ImageStore(self.settings.image_dir)
        self.supervisor = Supervisor(self.kernel, self.timeline, self, self.settings.respawn_delay_us)
        ring_order = self.settings.ring or default_ring(self.payloads)
        self.ring = None
        if len(ring_order) > 1:
            self.ring = LivenessRing(self.bus, self.timeline, ring_order, self.settings.effective_probe_timeout,
                                     self.settings.probe_threshold, self.supervisor.restart)
        self.watchdog = None
        if self.settings.watchdog_enabled and "timing" in self.kinds.values():
            self.watchdog = Watchdog(self.kernel, self.timeline, self.settings.effective_watchdog_timeout,
                                     self.settings.watchdog_check_us, self.reboot)
        self.ctx = NodeContext(self.kernel, self.bus, self.timeline, self.can_bus, self.settings.seed,
                               self.downlink, self.image_store, self.watchdog, self.ring, self)
        self.nodes: Dict[str, FlightNode] = {}
        self.replacing: Dict[str, str] = {}
        self.corrupt_next_uplink = False

    # roster queries

    @property
    def payloads(self) -> List[str]:
        return [node_id for node_id, kind in self.kinds.items() if kind == "payload"]

    def has_node(self, node_id: str) -> bool:
        return node_id in self.specs

    def spec_of(self, node_id: str) -> NodeSpec:
        self._require(node_id)
        return self.specs[node_id]

    def payload_id_of(self, node_id: str) -> Optional[int]:
        spec = self.specs.get(node_id)
        return spec.params.get("payload_id") if spec is not None else None

    def node(self, node_id: str) -> Optional[FlightNode]:
        self._require(node_id)
        return self.nodes.get(node_id)

    def nodes_of_kind(self, kind: str) -> List[FlightNode]:
        return [node for node_id, node in self.nodes.items() if self.kinds[node_id] == kind and node.alive]

    def is_pending(self, node_id: str) -> bool:
        return node_id in self.replacing

    def _require(self, node_id: str) -> None:
        if node_id not in self.specs:
            raise UnknownNodeError(f"no node {node_id} in the roster")

    def current_state(self, node_id: str) -> LifecycleState:
        node = self.node(node_id)
        return node.state if node is not None else LifecycleState.FINALIZED

    def request_transition(self, node_id: str, kind: TransitionKind, requester: str = SYSTEM_NODE) -> LifecycleState:
        node = self.node(node_id)
        if node is None:
            raise LifecycleTransitionError(f"{node_id} has no running instance", code="terminal")
        return node.request_transition(kind, requester)

    def all_active(self) -> bool:
        return all(self.current_state(node_id) is LifecycleState.ACTIVE for node_id in self.specs)

    # instances

    def start(self) -> None:
        down = set(self.settings.initially_down)
        for node_id in self.specs:
            if node_id not in down:
                self.spawn(node_id, requester=SYSTEM_NODE)
        if self.watchdog is not None:
            self.watchdog.start()

    def run_until(self, t: int) -> int:
        return self.kernel.run_until(t)

    def spawn(self, node_id: str, requester: str = SYSTEM_NODE,
              on_active: Optional[Callable[[], None]] = None) -> FlightNode:
        old = self.node(node_id)
        if old is not None and old.alive:
            old.kill(reason="superseded")
        node = create_node(self.specs[node_id], self.ctx)
        self.nodes[node_id] = node
        node.bring_up(requester, on_active=on_active)
        return node

    def retire(self, node_id: str, requester: str = SYSTEM_NODE) -> None:
        node = self.node(node_id)
        if node is not None and node.alive:
            if node.active:
                node.request_transition(TransitionKind.DEACTIVATE, requester)
            node.shut_down(requester)

    def kill_node(self, node_id: str, reason: str = "killed") -> None:
        node = self.node(node_id)
        if node is not None:
            node.kill(reason)

    def replace_node(self, node_id: str, behavior: str, build_delay: int, requester: str,
                     on_active: Optional[Callable[[str], None]] = None) -> None:
        """Deactivate and shut down the old instance, build, then bring the new behaviour up."""
        self._require(node_id)
        self.replacing[node_id] = behavior
        self.retire(node_id, requester)
        self.specs[node_id] = self.specs[node_id].with_behavior(behavior)
        self.kernel.schedule_after(build_delay, self._finish_replacement, node_id, behavior, requester, on_active)

    def _finish_replacement(self, node_id: str, behavior: str, requester: str,
                            on_active: Optional[Callable[[str], None]]) -> None:
        if self.replacing.get(node_id) != behavior:
            return

        def activated() -> None:
            self.replacing.pop(node_id, None)
            if on_active is not None:
                on_active(node_id)

        self.spawn(node_id, requester=requester, on_active=activated)

    def reboot(self) -> None:
        """Whole-computer restart: every node to Finalized, then the full roster rebuilt."""
        self.timeline.record(SYSTEM_NODE, EventKind.LOG, "reboot-begin", nodes=len(self.nodes))
        for node in list(self.nodes.values()):
            node.shut_down(requester="watchdog")
        for node in list(self.nodes.values()):
            if node.alive:
                node.kill(reason="reboot")
        self.can_bus.reset()
        self.supervisor.reset()
        self.replacing.clear()
        if self.ring is not None:
            self.ring.reset()
        for node_id in self.specs:
            self.spawn(node_id, requester="watchdog")
        log_event("SYSTEM_REBOOT_COMPLETE", level=logging.WARNING, nodes=len(self.specs),
                  sim_time_us=self.kernel.now())

    # ground interface

    def uplink(self, packet: bytes) -> None:
        if self.corrupt_next_uplink:
            self.corrupt_next_uplink = False
            packet = bytes(packet[:-1]) + bytes([packet[-1] ^ 0x01])
            self.timeline.record(GROUND_NODE, EventKind.LOG, "uplink-corrupted", size=len(packet))
        ttcs = self.nodes_of_kind("ttc")
        if not ttcs:
            self.timeline.record(GROUND_NODE, EventKind.LOG, "uplink-lost", size=len(packet))
            log_event("UPLINK_LOST", level=logging.WARNING, sim_time_us=self.kernel.now())
            return
        ttcs[0].on_uplink(packet)
