"""Structured-light depth from scan-timed events.

An ON event at camera pixel (x, y) and time t is attributed to the projector
pixel lit at t.  In the rectified rig the projector column, converted to
camera-equivalent pixels, gives the disparity and thereby the depth
Z = f_cam * baseline / d.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core.types import DepthMap, EventStream, ValidationError
from .projector import ScanSchedule, scan_position_at
from .scene import RigGeometry


@dataclass(frozen=True)
class Correspondences:
    """Camera pixel to projector pixel matches, one entry per kept event."""

    x: np.ndarray
    y: np.ndarray
    col: np.ndarray
    row: np.ndarray
    t: np.ndarray
    frame: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def to_csv(self, path) -> None:
        rows = np.column_stack([self.t, self.x, self.y, self.col, self.row, self.frame]).astype(np.int64)
        header = "t_us,x,y,col,row,frame"
        np.savetxt(path, rows, fmt="%d", delimiter=",", header=header, comments="")


def match_events(stream: EventStream, schedule: ScanSchedule, polarity: int | None = 1,
                 time_offset: float = 0.0) -> Correspondences:
    """Attribute events to the projector pixel lit at their timestamp.

    Args:
        polarity: keep only events of this polarity (``None`` keeps all).
        time_offset: seconds added to every event time before the lookup,
            e.g. to compensate a known sensor latency.

    Only the first event of each camera pixel within a scan frame is kept.
    """
    keep = np.ones(len(stream), dtype=bool) if polarity is None else stream.p == polarity
    t_us = stream.t[keep]
    x, y = stream.x[keep], stream.y[keep]
    ts = t_us * 1e-6 + time_offset
    if ts.size and ts.min() < schedule.start:
        raise ValidationError("event before schedule start")
    col, row, frame = scan_position_at(schedule, ts)
    col, row, frame = (np.asarray(a, dtype=np.int64).reshape(-1) for a in (col, row, frame))
    key = (frame * stream.height + y) * stream.width + x
    # stream order is time order, so unique's first index is the first event
    _, first = np.unique(key, return_index=True)
    first.sort()
    return Correspondences(x[first].astype(np.int64), y[first].astype(np.int64),
                           col[first], row[first], t_us[first], frame[first])


def depth_from_disparity(d, f: float, baseline: float):
    d = np.asarray(d, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(d > 0, f * baseline / d, np.nan)
    return float(z) if z.ndim == 0 else z


def quantization_bound(z, rig: RigGeometry):
    """Depth error caused by one projector pixel of disparity error, Z^2 / (f_proj * b)."""
    z = np.asarray(z, dtype=np.float64)
    out = z * z / (rig.projector.f * rig.baseline)
    return float(out) if out.ndim == 0 else out


def triangulate(corr: Correspondences, rig: RigGeometry, row_tolerance: float = 1.0):
    """Depth of each correspondence.

    Returns:
        (depth, accepted): depth in meters (NaN where rejected) and a mask.
        Rejected are non-positive disparities and matches whose projector row
        is more than ``row_tolerance`` projector pixels off the epipolar line.
    """
    if not rig.rectified:
        raise ValidationError("triangulation requires a rectified rig")
    cam, proj = rig.camera, rig.projector
    ratio = cam.f / proj.f
    x_proj = (corr.col - proj.cx) * ratio + cam.cx
    d = corr.x - x_proj
    v_expect = (corr.y - cam.cy) / ratio + proj.cy
    ok = (d > 0) & (np.abs(corr.row - v_expect) <= row_tolerance)
    z = np.where(ok, depth_from_disparity(np.where(ok, d, 1.0), cam.f, rig.baseline), np.nan)
    return z, ok


def reconstruct_depth(stream: EventStream, rig: RigGeometry, schedule: ScanSchedule,
                      polarity: int | None = 1, median_radius: int = 1,
                      row_tolerance: float = 1.0, time_offset: float = 0.0) -> DepthMap:
    """Full pipeline: match, triangulate, scatter per camera pixel, median-filter.

    With several frames the first accepted match of each pixel is used.
    """
    w, h = stream.width, stream.height
    if (w, h) != (rig.camera.width, rig.camera.height):
        raise ValidationError("stream geometry does not match the camera")
    if len(stream) == 0:
        return DepthMap.invalid(w, h)
    corr = match_events(stream, schedule, polarity, time_offset)
    z, ok = triangulate(corr, rig, row_tolerance)
    depth = np.zeros((h, w))
    valid = np.zeros((h, w), dtype=bool)
    # reversed assignment: the earliest accepted match ends up written last
    sel = np.flatnonzero(ok)[::-1]
    depth[corr.y[sel], corr.x[sel]] = z[sel]
    valid[corr.y[sel], corr.x[sel]] = True
    return median_filter(DepthMap(depth, valid), median_radius)


def median_filter(depth: DepthMap, radius: int) -> DepthMap:
    """Median over valid pixels of each (2r+1)^2 window.

    Invalid pixels stay invalid; pixels with fewer than 3 valid window
    members keep their value.  For an even count the lower of the two middle
    elements is taken, so outputs are always input values.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return depth
    r = int(radius)
    vals = np.where(depth.valid, depth.depth, np.nan)
    padded = np.pad(vals, r, mode="constant", constant_values=np.nan)
    win = sliding_window_view(padded, (2 * r + 1, 2 * r + 1))
    win = win.reshape(depth.shape + (-1,))
    srt = np.sort(win, axis=-1)  # NaN sorts last
    count = np.sum(~np.isnan(win), axis=-1)
    mid = np.take_along_axis(srt, np.maximum(count - 1, 0)[..., None] // 2, axis=-1)[..., 0]
    out = np.where(depth.valid & (count >= 3), mid, depth.depth)
    return DepthMap(out, depth.valid)


def write_depth(depth: DepthMap, path, mask_path=None) -> None:
    from .core import io as fio

    path = Path(path)
    fio.write_image(path, depth.depth.astype(np.float32))
    fio.write_mask(mask_path or path.with_name(path.stem + "_mask.pgm"), depth.valid)
