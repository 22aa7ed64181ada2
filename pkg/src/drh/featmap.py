"""Feature-map data model and the DRHF binary interchange format.

A feature map is the C-channel activation grid of one image, stored
row-major as (y, x, c) so a region window is a contiguous block of
(y, x) slices. The stride field records image pixels per cell and is
mandatory because query bounding boxes arrive in pixel coordinates.

DRHF layout (little-endian throughout):
    magic "DRHF" | u32 version=1 | u32 width_c | u32 height_c |
    u32 channels | u32 stride | u32 id_len | id UTF-8 bytes |
    width_c*height_c*channels f32 values
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, IoFailure, MalformedHeader, NonFiniteValue

MAGIC = b"DRHF"
VERSION = 1

_HEADER = struct.Struct("<4sIIIIII")


@dataclass
class FeatureMap:
    """One image's conv activation grid plus spatial-stride metadata."""

    image_id: str
    width_c: int
    height_c: int
    channels: int
    stride: int
    data: np.ndarray  # float32, shape (height_c, width_c, channels)

    def __post_init__(self):
        if self.width_c < 1 or self.height_c < 1 or self.channels < 1:
            raise DimensionMismatch(
                f"non-positive map dims {self.width_c}x{self.height_c}x{self.channels}"
            )
        if self.stride < 1:
            raise DimensionMismatch(f"stride must be >= 1, got {self.stride}")
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        expected = (self.height_c, self.width_c, self.channels)
        if self.data.shape != expected:
            if self.data.size == np.prod(expected):
                self.data = self.data.reshape(expected)
            else:
                raise DimensionMismatch(
                    f"data has {self.data.size} values, expected {np.prod(expected)}"
                )
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteValue(f"feature map {self.image_id!r} contains NaN/Inf")

    def __eq__(self, other):
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.width_c == other.width_c
            and self.height_c == other.height_c
            and self.channels == other.channels
            and self.stride == other.stride
            and np.array_equal(self.data, other.data)
        )


def write_feature_map(fm: FeatureMap, path) -> None:
    """Write a feature map as a DRHF file (bit-exact round-trip with read)."""
    id_bytes = fm.image_id.encode("utf-8")
    header = _HEADER.pack(
        MAGIC, VERSION, fm.width_c, fm.height_c, fm.channels, fm.stride, len(id_bytes)
    )
    payload = fm.data.astype("<f4", copy=False).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(id_bytes)
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_feature_map(path) -> FeatureMap:
    """Read a DRHF file, validating header, payload size and finiteness."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    if len(raw) < _HEADER.size:
        raise MalformedHeader(f"{path}: file shorter than header")
    magic, version, width_c, height_c, channels, stride, id_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MalformedHeader(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise MalformedHeader(f"{path}: unsupported version {version}")
    if width_c < 1 or height_c < 1 or channels < 1 or stride < 1:
        raise DimensionMismatch(f"{path}: non-positive header fields")

    offset = _HEADER.size
    if len(raw) < offset + id_len:
        raise DimensionMismatch(f"{path}: truncated image id")
    image_id = raw[offset : offset + id_len].decode("utf-8")
    offset += id_len

    count = width_c * height_c * channels
    expected_bytes = count * 4
    if len(raw) - offset != expected_bytes:
        raise DimensionMismatch(
            f"{path}: payload is {len(raw) - offset} bytes, expected {expected_bytes}"
        )
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"{path}: payload contains NaN/Inf")
    data = data.astype(np.float32).reshape(height_c, width_c, channels)
    return FeatureMap(image_id, width_c, height_c, channels, stride, data)
