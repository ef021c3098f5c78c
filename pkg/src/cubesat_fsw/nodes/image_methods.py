"""Stand-in image processing methods, keyed by method id."""
import struct
from typing import Callable, Dict

import numpy as np

from cubesat_fsw.core.messages import ImageBlob

ProcessingMethod = Callable[[ImageBlob], bytes]


def _pixels(blob: ImageBlob) -> np.ndarray:
    return np.frombuffer(blob.pixel_data, dtype=np.uint8)


def checksum(blob: ImageBlob) -> bytes:
    """32-bit sum of the pixel bytes modulo 2**32."""
    total = int(_pixels(blob).sum(dtype=np.uint64)) % (1 << 32)
    return struct.pack(">I", total)


def histogram16(blob: ImageBlob) -> bytes:
    """16-bin histogram of byte values, one 4-byte count per bin."""
    counts = np.bincount(_pixels(blob) >> 4, minlength=16)
    return struct.pack(">16I", *(int(count) for count in counts))


def mean8(blob: ImageBlob) -> bytes:
    pixels = _pixels(blob)
    return struct.pack(">B", int(pixels.mean()) if pixels.size else 0)


BASE_METHODS: Dict[str, ProcessingMethod] = {
    "checksum": checksum,
    "histogram16": histogram16,
}

V2_METHODS: Dict[str, ProcessingMethod] = {**BASE_METHODS, "mean8": mean8}
