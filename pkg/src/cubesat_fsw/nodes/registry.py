"""
Behaviour registry: behaviour id -> node class.

The supervisor respawns nodes from it and the maintenance node builds replacements
from it, so a behaviour id is all a telecommand needs to name new code.
"""
from typing import Callable, Dict, List, Type

from cubesat_fsw.nodes.base import FlightNode, NodeContext, NodeSpec
from cubesat_fsw.utils.error_handling import UnknownBehaviorError

_BEHAVIORS: Dict[str, Type[FlightNode]] = {}


def register_behavior(*names: str) -> Callable[[Type[FlightNode]], Type[FlightNode]]:
    def decorator(cls: Type[FlightNode]) -> Type[FlightNode]:
        for name in names:
            _BEHAVIORS[name] = cls
        return cls
    return decorator


def behavior_class(behavior: str) -> Type[FlightNode]:
    _load_builtin_behaviors()
    try:
        return _BEHAVIORS[behavior]
    except KeyError:
        raise UnknownBehaviorError(f"no behaviour registered as {behavior!r}") from None


def known_behaviors() -> List[str]:
    _load_builtin_behaviors()
    return sorted(_BEHAVIORS)


def behavior_kind(behavior: str) -> str:
    return behavior_class(behavior).kind


def create_node(spec: NodeSpec, ctx: NodeContext) -> FlightNode:
    return behavior_class(spec.behavior)(spec, ctx)


def _load_builtin_behaviors() -> None:
    # modules register themselves on import
    from cubesat_fsw.nodes import imaging, maintenance, payload, switch, timing, ttc  # noqa: F401
