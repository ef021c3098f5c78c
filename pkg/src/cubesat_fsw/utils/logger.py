import json
import logging
from datetime import datetime, timezone

from cubesat_fsw.config import Config

# Configure structured logging
logging.basicConfig(
    level=logging.WARNING,
    format='%(message)s'
)
logger = logging.getLogger("cubesat_fsw")
logger.setLevel(getattr(logging, Config.LOG_LEVEL.upper(), logging.WARNING))


class Colors:
    BLUE = '\033[94m'
    CYAN = '\033[96m'
    GREEN = '\033[92m'
    WARNING = '\033[93m'
    FAIL = '\033[91m'
    ENDC = '\033[0m'
    BOLD = '\033[1m'


def _color_for(message: str) -> str:
    if "ERROR" in message or "FAIL" in message:
        return Colors.FAIL
    if "SUCCESS" in message or "PASSED" in message:
        return Colors.GREEN
    if "WARNING" in message or "DROPPED" in message:
        return Colors.WARNING
    if "START" in message:
        return Colors.CYAN
    return Colors.BLUE


def log_event(message: str, level: int = logging.INFO, **data):
    """
    Structured logging helper that outputs JSON-formatted logs with color for readability.

    `message` is an UPPER_SNAKE event name; keyword data is rendered as indented JSON.
    Simulation code passes `sim_time_us` so operator logs line up with the timeline.
    """
    if not logger.isEnabledFor(level):
        return

    timestamp = datetime.now(timezone.utc).isoformat()
    if Config.LOG_COLOR:
        color, bold, endc = _color_for(message), Colors.BOLD, Colors.ENDC
    else:
        color = bold = endc = ""

    readable_str = f"{bold}{color}[{timestamp}] {message}{endc}"
    if data:
        readable_str += f"\n{color}" + json.dumps(data, indent=2, default=str) + f"{endc}\n"
        readable_str += "-" * 50

    logger.log(level, readable_str)
