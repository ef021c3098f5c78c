"""
Imaging pipeline: acquisition and processing action servers, and the action client
the TT&C node uses to chain them. Long work is a scheduled completion, never a
blocking handler, so telemetry keeps flowing while an image is in progress.
"""
import logging
import struct
from typing import Callable, Dict, Optional

from cubesat_fsw.config import Config
from cubesat_fsw.core.message_bus import ActionExchange, ActionObserver, ActionStatus, Envelope, GoalHandle
from cubesat_fsw.core.messages import ImageBlob, ImageTask, ProcessedImageInfo, ProcessingGoal
from cubesat_fsw.core.timeline import EventKind
from cubesat_fsw.nodes.base import (
    ACQUIRE_ACTION,
    IMAGE_TOPIC,
    PROCESS_ACTION,
    PROCESSED_IMAGE_TOPIC,
    FlightNode,
)
from cubesat_fsw.nodes.image_methods import BASE_METHODS, V2_METHODS, ProcessingMethod
from cubesat_fsw.nodes.image_store import synthetic_pixels
from cubesat_fsw.nodes.registry import register_behavior
from cubesat_fsw.utils.error_handling import CodecError
from cubesat_fsw.utils.logger import log_event


@register_behavior("image_acquisition")
class ImageAcquisitionNode(FlightNode):
    kind = "image_acquisition"
    defaults = {"width": Config.IMAGE_WIDTH, "height": Config.IMAGE_HEIGHT}

    def on_configure(self) -> None:
        self.bus.register_action(self.node_id, ACQUIRE_ACTION, self.guarded(self.on_task))

    def on_task(self, handle: GoalHandle) -> None:
        if not self.active:
            handle.abort("inactive")
            return
        try:
            task = ImageTask.from_bytes(handle.goal)
        except CodecError:
            handle.abort("malformed-task")
            return
        now = self.kernel.now()
        if task.capture_time < now:
            self.record(EventKind.LOG, "task-rejected", reason="stale-task", capture_time=task.capture_time)
            handle.abort("stale-task")
            return
        handle.publish_feedback(struct.pack(">Q", task.capture_time))
        self.schedule(task.capture_time - now, self._capture, handle)

    def _capture(self, handle: GoalHandle) -> None:
        if not handle.active:
            return
        store = self.ctx.image_store
        image_id = store.next_id()
        width, height = int(self.param("width")), int(self.param("height"))
        blob = ImageBlob(image_id, width, height, synthetic_pixels(self.ctx.seed, image_id, width, height),
                         self.kernel.now())
        store.save(blob)
        self.record(EventKind.LOG, "image-captured", image_id=image_id, size=len(blob.pixel_data))
        self.bus.publish(self.node_id, IMAGE_TOPIC, blob.to_bytes())
        handle.succeed(struct.pack(">I", image_id))


@register_behavior("image_processing")
class ImageProcessingNode(FlightNode):
    kind = "image_processing"
    methods: Dict[str, ProcessingMethod] = BASE_METHODS
    defaults = {"processing_us": Config.IMAGE_PROCESSING_US}

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        self.blobs: Dict[int, ImageBlob] = {}

    def on_configure(self) -> None:
        self.subscribe(IMAGE_TOPIC, self.on_image)
        self.bus.register_action(self.node_id, PROCESS_ACTION, self.guarded(self.on_goal))

    def on_image(self, envelope: Envelope) -> None:
        blob = ImageBlob.from_bytes(envelope.payload)
        self.blobs[blob.image_id] = blob

    def on_goal(self, handle: GoalHandle) -> None:
        if not self.active:
            handle.abort("inactive")
            return
        try:
            goal = ProcessingGoal.from_bytes(handle.goal)
        except CodecError:
            handle.abort("malformed-goal")
            return
        method = self.methods.get(goal.method_id)
        if method is None:
            self.record(EventKind.LOG, "goal-rejected", reason="unknown-method", method=goal.method_id)
            handle.abort("unknown-method")
            return
        blob = self.blobs.get(goal.image_id) or self.ctx.image_store.load(goal.image_id)
        if blob is None:
            handle.abort("unknown-image")
            return
        duration = int(self.param("processing_us"))
        info = ProcessedImageInfo(blob.image_id, goal.method_id, method(blob), duration)
        self.schedule(duration, self._finish, handle, info)

    def _finish(self, handle: GoalHandle, info: ProcessedImageInfo) -> None:
        if not handle.active:
            return
        self.bus.publish(self.node_id, PROCESSED_IMAGE_TOPIC, info.to_bytes())
        handle.succeed(info.to_bytes())


@register_behavior("image_processing_v2")
class ImageProcessingNodeV2(ImageProcessingNode):
    """Processing build that adds the mean8 method."""
    methods = V2_METHODS


class ImagingClient:
    """Runs acquire then process for one task and hands the result to `on_result`."""

    def __init__(self, node: FlightNode, on_result: Callable[[ProcessedImageInfo], None]):
        self.node = node
        self.on_result = on_result
        self.succeeded = 0
        self.failed = 0

    def run(self, task: ImageTask) -> ActionExchange:
        self.node.record(EventKind.LOG, "imaging-started", method=task.method_id, capture_time=task.capture_time)
        observer = ActionObserver(on_result=self.node.guarded(lambda exchange: self._acquired(task, exchange)))
        return self.node.bus.send_goal(self.node.node_id, ACQUIRE_ACTION, task.to_bytes(), observer)

    def _acquired(self, task: ImageTask, exchange: ActionExchange) -> None:
        if exchange.status is not ActionStatus.SUCCEEDED:
            self._fail("acquire", exchange.reason)
            return
        (image_id,) = struct.unpack(">I", exchange.result)
        goal = ProcessingGoal(image_id, task.method_id)
        observer = ActionObserver(on_result=self.node.guarded(self._processed))
        self.node.bus.send_goal(self.node.node_id, PROCESS_ACTION, goal.to_bytes(), observer)

    def _processed(self, exchange: ActionExchange) -> None:
        if exchange.status is not ActionStatus.SUCCEEDED:
            self._fail("process", exchange.reason)
            return
        info = ProcessedImageInfo.from_bytes(exchange.result)
        self.succeeded += 1
        self.node.record(EventKind.LOG, "imaging-succeeded", image_id=info.image_id, method=info.method_id)
        self.on_result(info)

    def _fail(self, stage: str, reason: Optional[str]) -> None:
        self.failed += 1
        self.node.record(EventKind.LOG, "imaging-failed", stage=stage, reason=reason or "-")
        log_event("IMAGING_FAILED", level=logging.ERROR, node=self.node.node_id, stage=stage, reason=reason,
                  sim_time_us=self.node.kernel.now())
