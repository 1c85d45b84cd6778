"""Bit-exact readers and writers for events, images and point clouds.

Formats
-------
events   CSV.  Line 1 ``# sensor <W> <H>``, line 2 ``t_us,x,y,p``, then one
         integer row per event in canonical order.
PGM/PPM  binary P5 / P6 with maxval 255.
PFM      ``Pf`` (gray) or ``PF`` (RGB), float32, scanlines stored bottom to
         top; a negative scale means little-endian data.  Written files are
         always little-endian with scale ``-1.0``.
XYZ      one ``x y z`` point per line, 9 significant digits.
"""

from __future__ import annotations

import io
import os
import re
from pathlib import Path

import numpy as np

from .types import EventStream, ValidationError, as_pointcloud, first_unsorted

EVENT_HEADER = "t_us,x,y,p"
_SENSOR_RE = re.compile(r"#\s*sensor\s+(\d+)\s+(\d+)\s*$")


class FormatError(ValueError):
    """Malformed or unsupported file content."""


# --------------------------------------------------------------------- events


def write_events(stream: EventStream, path) -> None:
    buf = io.StringIO()
    buf.write(f"# sensor {stream.width} {stream.height}\n{EVENT_HEADER}\n")
    if len(stream):
        rows = np.column_stack([stream.t, stream.x, stream.y, stream.p]).astype(np.int64)
        # one bulk %-format per chunk: several times faster than savetxt, same bytes
        for i in range(0, len(rows), 1 << 20):
            chunk = rows[i:i + (1 << 20)]
            buf.write(("%d,%d,%d,%d\n" * len(chunk)) % tuple(chunk.ravel().tolist()))
    Path(path).write_text(buf.getvalue(), encoding="ascii", newline="\n")


def read_events(path, geometry: tuple[int, int] | None = None) -> EventStream:
    """Read an event CSV.

    The sensor geometry comes from the ``# sensor`` line; ``geometry`` is only
    needed for files without one.  Raises :class:`FormatError` naming the
    offending line for malformed rows and :class:`ValidationError` for
    out-of-bounds or unsorted events.
    """
    lines = Path(path).read_text(encoding="ascii").splitlines()
    width = height = None
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        m = _SENSOR_RE.match(lines[i].strip())
        if m:
            width, height = int(m.group(1)), int(m.group(2))
        i += 1
    if width is None:
        if geometry is None:
            raise FormatError(f"{path}: missing '# sensor W H' line and no geometry given")
        width, height = geometry
    if i >= len(lines) or lines[i].strip() != EVENT_HEADER:
        raise FormatError(f"{path}: line {i + 1}: expected header '{EVENT_HEADER}'")
    first_row = i + 1
    body = [ln for ln in lines[first_row:]]
    while body and not body[-1].strip():
        body.pop()
    if not body:
        return EventStream.empty(width, height)

    rows = np.empty((len(body), 4), dtype=np.int64)
    for j, ln in enumerate(body):
        parts = ln.split(",")
        try:
            if len(parts) != 4:
                raise ValueError
            rows[j] = [int(v) for v in parts]
        except ValueError:
            raise FormatError(f"{path}: line {first_row + j + 1}: malformed event row {ln!r}") from None
    t, x, y, p = rows.T
    bad = first_unsorted(t, y, x, p)
    if bad is not None:
        raise ValidationError(f"{path}: line {first_row + bad + 1}: events not sorted")
    oob = np.flatnonzero((x < 0) | (x >= width) | (y < 0) | (y >= height))
    if oob.size:
        j = oob[0]
        raise ValidationError(
            f"{path}: line {first_row + j + 1}: coordinates ({x[j]}, {y[j]}) outside {width}x{height}"
        )
    return EventStream(t, x, y, p, width, height)


# --------------------------------------------------------------------- images


def _read_tokens(data: bytes, count: int, pos: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated header")
        tokens.append(data[start:pos])
    return tokens, pos


def read_image(path) -> np.ndarray:
    """Read a P5, P6 or PFM file.

    Returns ``uint8`` arrays for PGM/PPM and ``float32`` arrays for PFM;
    color images have a trailing channel axis of length 3.
    """
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic in (b"P5", b"P6"):
        (w, h, maxval), pos = _read_tokens(data, 3, 2)
        w, h, maxval = int(w), int(h), int(maxval)
        if maxval != 255:
            raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
        pos += 1  # single whitespace byte before the raster
        channels = 3 if magic == b"P6" else 1
        size = w * h * channels
        raster = data[pos : pos + size]
        if len(raster) != size:
            raise FormatError(f"{path}: truncated payload ({len(raster)} of {size} bytes)")
        img = np.frombuffer(raster, dtype=np.uint8)
        return img.reshape((h, w, 3) if channels == 3 else (h, w)).copy()
    if magic in (b"Pf", b"PF"):
        (w, h, scale), pos = _read_tokens(data, 3, 2)
        w, h, scale = int(w), int(h), float(scale)
        pos += 1
        channels = 3 if magic == b"PF" else 1
        dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
        size = w * h * channels * 4
        raster = data[pos : pos + size]
        if len(raster) != size:
            raise FormatError(f"{path}: truncated payload ({len(raster)} of {size} bytes)")
        img = np.frombuffer(raster, dtype=dtype).astype(np.float32)
        img = img.reshape((h, w, 3) if channels == 3 else (h, w))
        return np.ascontiguousarray(img[::-1])
    raise FormatError(f"{path}: unsupported magic number {magic!r}")


def write_image(path, image) -> None:
    """Write ``uint8`` images as P5/P6 and floating images as PFM."""
    img = np.asarray(image)
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise FormatError(f"unsupported image shape {img.shape}")
    if img.size == 0:
        raise FormatError("image dimensions must be > 0")
    h, w = img.shape[:2]
    if img.dtype == np.uint8:
        magic = b"P6" if img.ndim == 3 else b"P5"
        payload = np.ascontiguousarray(img).tobytes()
        header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    elif np.issubdtype(img.dtype, np.floating):
        magic = b"PF" if img.ndim == 3 else b"Pf"
        payload = np.ascontiguousarray(img[::-1], dtype="<f4").tobytes()
        header = magic + f"\n{w} {h}\n-1.0\n".encode("ascii")
    else:
        raise FormatError(f"unsupported image dtype {img.dtype}")
    Path(path).write_bytes(header + payload)


def write_mask(path, mask) -> None:
    """Boolean mask as PGM with values 0 / 255."""
    write_image(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def read_mask(path) -> np.ndarray:
    return read_image(path) > 127


def write_labels(path, labels) -> None:
    write_image(path, np.asarray(labels, dtype=np.uint8))


def read_labels(path) -> np.ndarray:
    labels = read_image(path)
    if labels.ndim != 2 or np.any(labels > 2):
        raise FormatError(f"{path}: label map must be a PGM with values in {{0, 1, 2}}")
    return labels


# --------------------------------------------------------------- point clouds


def write_pointcloud(points, path) -> None:
    pts = as_pointcloud(points)
    buf = io.StringIO()
    if len(pts):
        np.savetxt(buf, pts, fmt="%.9g", delimiter=" ")
    Path(path).write_text(buf.getvalue(), encoding="ascii", newline="\n")


def read_pointcloud(path) -> np.ndarray:
    pts = []
    for n, ln in enumerate(Path(path).read_text(encoding="ascii").splitlines(), start=1):
        if not ln.strip():
            continue
        parts = ln.split()
        try:
            if len(parts) != 3:
                raise ValueError
            pts.append([float(v) for v in parts])
        except ValueError:
            raise FormatError(f"{path}: line {n}: expected 'x y z', got {ln!r}") from None
    try:
        return as_pointcloud(pts)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from None


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
