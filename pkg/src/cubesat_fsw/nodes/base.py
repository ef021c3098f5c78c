from dataclasses import dataclass, field
from typing import Any, Dict

from cubesat_fsw.canbus.can_sim import CanBus
from cubesat_fsw.core.lifecycle import LifecycleNode
from cubesat_fsw.core.message_bus import MessageBus
from cubesat_fsw.core.sim_kernel import SimKernel
from cubesat_fsw.core.timeline import Timeline

TIMING_TOPIC = "/timing"
TASK_FLAGS_TOPIC = "/task_flags"
TELECOMMAND_TOPIC = "/telecommand"
MAINTENANCE_TOPIC = "/maintenance"
IMAGE_TOPIC = "/imaging/image"
PROCESSED_IMAGE_TOPIC = "/imaging/processed"
ACQUIRE_ACTION = "/imaging/acquire"
PROCESS_ACTION = "/imaging/process"


def telemetry_topic(node_id: str) -> str:
    return f"/telemetry/{node_id}"


def liveness_service(node_id: str) -> str:
    return f"/liveness/{node_id}"


@dataclass(frozen=True)
class NodeSpec:
    """What is needed to (re)build a node: id, behaviour and parameter overrides."""
    node_id: str
    behavior: str
    params: Dict[str, Any] = field(default_factory=dict)

    def with_behavior(self, behavior: str) -> "NodeSpec":
        return NodeSpec(self.node_id, behavior, dict(self.params))


@dataclass
class NodeContext:
    """Shared simulation services handed to every node instance."""
    kernel: SimKernel
    bus: MessageBus
    timeline: Timeline
    can_bus: CanBus
    seed: int = 0
    downlink: Any = None
    image_store: Any = None
    watchdog: Any = None
    ring: Any = None
    system: Any = None


class FlightNode(LifecycleNode):
    kind = "node"
    defaults: Dict[str, Any] = {}

    def __init__(self, spec: NodeSpec, ctx: NodeContext):
        super().__init__(spec.node_id, ctx.kernel, ctx.bus, ctx.timeline,
                         transition_duration=int(spec.params.get("transition_duration_us", 0)))
        self.spec = spec
        self.ctx = ctx
        self._subscription_ids = []
        for key, value in self.defaults.items():
            self.declare_parameter(key, spec.params.get(key, value))

    @property
    def behavior(self) -> str:
        return self.spec.behavior

    def subscribe(self, topic: str, handler) -> int:
        subscription_id = self.bus.subscribe(self.node_id, topic, self.guarded(handler))
        self._subscription_ids.append(subscription_id)
        return subscription_id

    def unsubscribe_all(self) -> None:
        for subscription_id in self._subscription_ids:
            self.bus.unsubscribe(subscription_id)
        self._subscription_ids = []

    def on_cleanup(self) -> None:
        self.unsubscribe_all()
