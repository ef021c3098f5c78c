"""
Wall-clock latency bench.

One publisher thread per payload telemetry topic publishes at a fixed rate onto a bus
driven by WallClockKernel; the dispatch loop runs in the calling thread. Heavy load
adds one busy-spinning process per logical core for the length of the run.
Absolute numbers depend on the host; only the table structure is stable.
"""
import logging
import multiprocessing
import threading
from dataclasses import dataclass
from enum import Enum
from typing import List

import psutil

from cubesat_fsw.config import Config
from cubesat_fsw.core.message_bus import DeliveryModel, MessageBus
from cubesat_fsw.core.messages import TelemetryRecord
from cubesat_fsw.core.sim_kernel import WallClockKernel
from cubesat_fsw.harness.stats import LatencyStats, stats_by_name
from cubesat_fsw.nodes.base import telemetry_topic
from cubesat_fsw.utils.logger import log_event

SUBSCRIBER = "ttc"
DRAIN_US = 50_000


class LoadLevel(str, Enum):
    LIGHT = "light"
    HEAVY = "heavy"


@dataclass
class BenchSettings:
    duration_s: float = 10.0
    load: LoadLevel = LoadLevel.LIGHT
    payloads: int = 3
    rate_hz: int = Config.BENCH_RATE_HZ
    seed: int = Config.DEFAULT_SEED


def _spin() -> None:
    while True:
        pass


def start_load(load: LoadLevel) -> List[multiprocessing.Process]:
    if load is not LoadLevel.HEAVY:
        return []
    workers = [multiprocessing.Process(target=_spin, daemon=True)
               for _ in range(psutil.cpu_count(logical=True) or 1)]
    for worker in workers:
        worker.start()
    log_event("BENCH_LOAD_START", workers=len(workers))
    return workers


def stop_load(workers: List[multiprocessing.Process]) -> None:
    for worker in workers:
        worker.terminate()
    for worker in workers:
        worker.join(timeout=1.0)


def _publisher(bus: MessageBus, node_id: str, payload_id: int, period_s: float, stop: threading.Event) -> None:
    cycle = 0
    while not stop.is_set():
        cycle += 1
        record = TelemetryRecord(payload_id, cycle, bytes(14), bus.kernel.now())
        bus.publish(node_id, telemetry_topic(node_id), record.to_bytes())
        stop.wait(period_s)


def run_bench(settings: BenchSettings) -> List[LatencyStats]:
    """Per-topic delivery latency in wall-clock mode."""
    kernel = WallClockKernel(settings.seed)
    bus = MessageBus(kernel, None, DeliveryModel(0, 0, settings.seed))
    bus.register_node(SUBSCRIBER)
    nodes = [f"payload{index}" for index in range(1, settings.payloads + 1)]
    for node_id in nodes:
        bus.register_node(node_id)
        bus.subscribe(SUBSCRIBER, telemetry_topic(node_id), lambda envelope: None)

    stop = threading.Event()
    threads = [threading.Thread(target=_publisher, name=f"bench-{node_id}", daemon=True,
                                args=(bus, node_id, index, 1.0 / settings.rate_hz, stop))
               for index, node_id in enumerate(nodes, start=1)]
    workers = start_load(settings.load)
    log_event("BENCH_START", load=settings.load.value, duration_s=settings.duration_s,
              publishers=len(threads), rate_hz=settings.rate_hz)
    try:
        for thread in threads:
            thread.start()
        duration_us = int(settings.duration_s * 1_000_000)
        kernel.run_until(duration_us)
        stop.set()
        for thread in threads:
            thread.join()
        kernel.run_until(kernel.now() + DRAIN_US)
    finally:
        stop.set()
        stop_load(workers)
        kernel.close()

    topics = [telemetry_topic(node_id) for node_id in nodes]
    entries = stats_by_name(bus.latency_samples, topics)
    log_event("BENCH_COMPLETE", level=logging.INFO, topics=len(entries),
              samples=sum(entry.count for entry in entries))
    return entries
