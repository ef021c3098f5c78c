import os
from dotenv import load_dotenv

load_dotenv()


def _int(name: str, default: int) -> int:
    return int(os.getenv(name, default))


class Config:
    # Timing
    TIMING_PERIOD_US = _int("FSW_TIMING_PERIOD_US", 1_000_000)

    # CAN devices and payload nodes
    DEVICE_RESPONSE_DELAY_US = _int("FSW_DEVICE_RESPONSE_DELAY_US", 5_000)
    PROCESSING_DELAY_US = _int("FSW_PROCESSING_DELAY_US", 400_000)
    COMMAND_HANDLING_US = _int("FSW_COMMAND_HANDLING_US", 50_000)
    RESPONSE_TIMEOUT_US = _int("FSW_RESPONSE_TIMEOUT_US", 50_000)
    POLL_DELAY_MS = _int("FSW_POLL_DELAY_MS", 20)

    # Fault tolerance
    PROBE_THRESHOLD = _int("FSW_PROBE_THRESHOLD", 3)
    RESPAWN_DELAY_US = _int("FSW_RESPAWN_DELAY_US", 100_000)
    WATCHDOG_PERIODS = _int("FSW_WATCHDOG_PERIODS", 3)
    WATCHDOG_CHECK_US = _int("FSW_WATCHDOG_CHECK_US", 100_000)
    BUILD_DELAY_US = _int("FSW_BUILD_DELAY_US", 2_000_000)

    # Message bus delivery
    BASE_DELAY_US = _int("FSW_BASE_DELAY_US", 100)
    JITTER_BOUND_US = _int("FSW_JITTER_BOUND_US", 0)

    # Imaging
    IMAGE_WIDTH = _int("FSW_IMAGE_WIDTH", 64)
    IMAGE_HEIGHT = _int("FSW_IMAGE_HEIGHT", 64)
    IMAGE_PROCESSING_US = _int("FSW_IMAGE_PROCESSING_US", 500_000)

    # Harness
    DEFAULT_SEED = _int("FSW_DEFAULT_SEED", 1)
    OUTPUT_DIR = os.getenv("FSW_OUTPUT_DIR", "out")
    BENCH_RATE_HZ = _int("FSW_BENCH_RATE_HZ", 200)

    LOG_LEVEL = os.getenv("FSW_LOG_LEVEL", "WARNING")
    LOG_COLOR = os.getenv("FSW_LOG_COLOR", "1") not in ("0", "false", "no")

    @classmethod
    def probe_timeout_us(cls, period_us: int) -> int:
        return period_us // 2

    @classmethod
    def watchdog_timeout_us(cls, period_us: int) -> int:
        return cls.WATCHDOG_PERIODS * period_us
