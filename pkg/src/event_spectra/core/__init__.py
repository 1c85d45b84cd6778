"""Domain types and file formats shared by every pipeline stage."""

from .io import (
    FormatError,
    read_events,
    read_image,
    read_labels,
    read_mask,
    read_pointcloud,
    write_events,
    write_image,
    write_labels,
    write_mask,
    write_pointcloud,
)
from .types import (
    LABEL_BACKGROUND,
    LABEL_BRANCHES,
    LABEL_LEAVES,
    LABEL_NAMES,
    Box,
    DepthMap,
    Event,
    EventStream,
    ValidationError,
    as_labelmap,
    as_pointcloud,
)

__all__ = [
    "Box", "DepthMap", "Event", "EventStream", "FormatError", "ValidationError",
    "LABEL_BACKGROUND", "LABEL_BRANCHES", "LABEL_LEAVES", "LABEL_NAMES",
    "as_labelmap", "as_pointcloud",
    "read_events", "read_image", "read_labels", "read_mask", "read_pointcloud",
    "write_events", "write_image", "write_labels", "write_mask", "write_pointcloud",
]
