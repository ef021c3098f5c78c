"""
Image store: one raw file per image plus an index manifest.

    <root>/img_000001.raw   pixel bytes, row-major
    <root>/index.json       {"images": [{"image_id", "file", "width", "height",
                                          "bytes_per_pixel", "captured_at_us", "size"}]}

With no root the store is memory-only.
"""
import json
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from cubesat_fsw.core.messages import ImageBlob
from cubesat_fsw.utils.error_handling import ArtifactIOError

INDEX_FILE = "index.json"


def synthetic_pixels(seed: int, image_id: int, width: int, height: int) -> bytes:
    rng = np.random.default_rng([seed, image_id])
    return rng.integers(0, 256, size=width * height, dtype=np.uint8).tobytes()


class ImageStore:
    def __init__(self, root: Optional[Union[str, Path]] = None):
        self.root = Path(root) if root is not None else None
        self._blobs: Dict[int, ImageBlob] = {}
        self._last_id = 0

    def next_id(self) -> int:
        self._last_id += 1
        return self._last_id

    def __contains__(self, image_id: int) -> bool:
        return image_id in self._blobs

    @staticmethod
    def file_name(image_id: int) -> str:
        return f"img_{image_id:06d}.raw"

    def save(self, blob: ImageBlob) -> None:
        self._blobs[blob.image_id] = blob
        if self.root is None:
            return
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            (self.root / self.file_name(blob.image_id)).write_bytes(blob.pixel_data)
            (self.root / INDEX_FILE).write_text(json.dumps({"images": self.manifest()}, indent=2) + "\n")
        except OSError as exc:
            raise ArtifactIOError(f"cannot write image {blob.image_id} to {self.root}: {exc}") from exc

    def manifest(self) -> List[dict]:
        return [
            {
                "image_id": blob.image_id,
                "file": self.file_name(blob.image_id),
                "width": blob.width,
                "height": blob.height,
                "bytes_per_pixel": blob.bytes_per_pixel,
                "captured_at_us": blob.captured_at,
                "size": len(blob.pixel_data),
            }
            for blob in sorted(self._blobs.values(), key=lambda b: b.image_id)
        ]

    def load(self, image_id: int) -> Optional[ImageBlob]:
        if image_id in self._blobs:
            return self._blobs[image_id]
        if self.root is None:
            return None
        return _load_from_disk(self.root, image_id)


def _load_from_disk(root: Path, image_id: int) -> Optional[ImageBlob]:
    try:
        index = json.loads((root / INDEX_FILE).read_text())
    except (OSError, ValueError):
        return None
    for entry in index.get("images", []):
        if entry["image_id"] == image_id:
            pixels = (root / entry["file"]).read_bytes()
            return ImageBlob(image_id, entry["width"], entry["height"], pixels,
                             entry["captured_at_us"], entry["bytes_per_pixel"])
    return None
