"""Shared domain types: events, depth maps, point clouds and label maps.

Images are plain numpy arrays throughout the package:

* gray images are ``uint8`` arrays of shape ``(H, W)``,
* float images are ``float32``/``float64`` arrays of shape ``(H, W)``,
* RGB images are ``uint8`` arrays of shape ``(H, W, 3)``.

Only the types that carry invariants beyond a bare array get a class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

LABEL_BACKGROUND = 0
LABEL_LEAVES = 1
LABEL_BRANCHES = 2
LABEL_NAMES = {LABEL_BACKGROUND: "background", LABEL_LEAVES: "leaves", LABEL_BRANCHES: "branches"}


class ValidationError(ValueError):
    """Raised when a value violates a domain invariant."""


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class EventStream:
    """Time-ordered events of one sensor.

    Events are stored column-wise (``t``, ``x``, ``y``, ``p`` arrays). The
    canonical order is ascending ``t`` with ties broken by ``(y, x, p)``.
    Construct through :meth:`from_arrays` to have unsorted input sorted, or
    through the constructor to have it validated as-is.
    """

    __slots__ = ("t", "x", "y", "p", "width", "height")

    def __init__(self, t, x, y, p, width: int, height: int, *, check: bool = True):
        self.t = _frozen(np.asarray(t, dtype=np.int64).reshape(-1))
        self.x = _frozen(np.asarray(x, dtype=np.int32).reshape(-1))
        self.y = _frozen(np.asarray(y, dtype=np.int32).reshape(-1))
        self.p = _frozen(np.asarray(p, dtype=np.int8).reshape(-1))
        self.width = int(width)
        self.height = int(height)
        if check:
            self.validate()

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, width, height)

    @classmethod
    def from_arrays(cls, t, x, y, p, width: int, height: int) -> "EventStream":
        """Build a stream from unordered arrays, sorting into canonical order."""
        t = np.asarray(t, dtype=np.int64).reshape(-1)
        x = np.asarray(x, dtype=np.int32).reshape(-1)
        y = np.asarray(y, dtype=np.int32).reshape(-1)
        p = np.asarray(p, dtype=np.int8).reshape(-1)
        n_pix = 2 * int(width) * int(height)
        if t.size and t.min() >= 0 and t.max() < (2**62) // n_pix and x.min() >= 0 and y.min() >= 0:
            # one packed int64 key sorts much faster than a 4-key lexsort
            key = t * n_pix + (y.astype(np.int64) * width + x) * 2 + (p > 0)
            order = np.argsort(key, kind="stable")
        else:
            order = np.lexsort((p, x, y, t))
        return cls(t[order], x[order], y[order], p[order], width, height)

    @classmethod
    def from_events(cls, events, width: int, height: int) -> "EventStream":
        events = list(events)
        if not events:
            return cls.empty(width, height)
        t, x, y, p = zip(*events)
        return cls.from_arrays(t, x, y, p, width, height)

    def validate(self) -> None:
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValidationError("event columns have different lengths")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"invalid sensor geometry {self.width}x{self.height}")
        if n == 0:
            return
        bad = np.flatnonzero(
            (self.x < 0) | (self.x >= self.width) | (self.y < 0) | (self.y >= self.height)
        )
        if bad.size:
            i = bad[0]
            raise ValidationError(
                f"event {i} at ({self.x[i]}, {self.y[i]}) outside {self.width}x{self.height} sensor"
            )
        if np.any(self.t < 0):
            raise ValidationError(f"negative timestamp at event {np.flatnonzero(self.t < 0)[0]}")
        if np.any((self.p != 1) & (self.p != -1)):
            raise ValidationError("polarity must be -1 or +1")
        i = first_unsorted(self.t, self.y, self.x, self.p)
        if i is not None:
            raise ValidationError(f"events not in canonical order at index {i}")

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for t, x, y, p in zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.p.tolist()):
            yield Event(t, x, y, p)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    def __repr__(self) -> str:
        return f"EventStream({len(self)} events, {self.width}x{self.height})"

    @property
    def geometry(self) -> tuple[int, int]:
        return self.width, self.height

    def select(self, mask) -> "EventStream":
        mask = np.asarray(mask)
        return EventStream(
            self.t[mask], self.x[mask], self.y[mask], self.p[mask],
            self.width, self.height, check=False,
        )

    def merge(self, other: "EventStream") -> "EventStream":
        if self.geometry != other.geometry:
            raise ValidationError("cannot merge streams of different sensor geometry")
        return EventStream.from_arrays(
            np.concatenate([self.t, other.t]),
            np.concatenate([self.x, other.x]),
            np.concatenate([self.y, other.y]),
            np.concatenate([self.p, other.p]),
            self.width, self.height,
        )

    def count_image(self, polarity: int | None = None) -> np.ndarray:
        """Per-pixel event counts, optionally for one polarity only."""
        sel = slice(None) if polarity is None else self.p == polarity
        counts = np.zeros(self.width * self.height, dtype=np.int64)
        np.add.at(counts, self.y[sel].astype(np.int64) * self.width + self.x[sel], 1)
        return counts.reshape(self.height, self.width)


def first_unsorted(t, y, x, p) -> int | None:
    """Index of the first event that breaks canonical (t, y, x, p) order."""
    if len(t) < 2:
        return None
    keys = (t, y, x, p)
    # lexicographic "previous <= current" over the four keys
    le = np.zeros(len(t) - 1, dtype=bool)
    eq = np.ones(len(t) - 1, dtype=bool)
    for k in keys:
        k = np.asarray(k, dtype=np.int64)
        a, b = k[:-1], k[1:]
        le |= eq & (a < b)
        eq &= a == b
    ok = le | eq
    bad = np.flatnonzero(~ok)
    return int(bad[0]) + 1 if bad.size else None


@dataclass(frozen=True)
class DepthMap:
    """Metric depth (meters) with a validity mask of the same shape."""

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if depth.ndim != 2 or depth.shape != valid.shape:
            raise ValidationError(
                f"depth {depth.shape} and validity mask {valid.shape} must be equal 2-D shapes"
            )
        if depth.size == 0:
            raise ValidationError("depth map must not be empty")
        good = np.isfinite(depth) & (depth > 0)
        if np.any(valid & ~good):
            raise ValidationError("valid pixels must have finite depth > 0")
        depth = np.where(valid, depth, 0.0)
        object.__setattr__(self, "depth", _frozen(depth))
        object.__setattr__(self, "valid", _frozen(valid))

    @classmethod
    def from_array(cls, depth) -> "DepthMap":
        """Wrap a depth array, treating non-finite and non-positive values as invalid."""
        depth = np.asarray(depth, dtype=np.float64)
        valid = np.isfinite(depth) & (depth > 0)
        return cls(np.where(valid, depth, 0.0), valid)

    @classmethod
    def invalid(cls, width: int, height: int) -> "DepthMap":
        return cls(np.zeros((height, width)), np.zeros((height, width), dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @property
    def coverage(self) -> float:
        return float(self.valid.mean())


def as_pointcloud(points) -> np.ndarray:
    """Validate and return an ``(N, 3)`` float64 point array."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.zeros((0, 3))
    pts = pts.reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise ValidationError("point cloud contains non-finite coordinates")
    return pts


def as_labelmap(labels, shape: tuple[int, int] | None = None) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValidationError("label map must be 2-D")
    if shape is not None and labels.shape != tuple(shape):
        raise ValidationError(f"label map shape {labels.shape} does not match image {tuple(shape)}")
    if np.any((labels < 0) | (labels > 2)):
        raise ValidationError("label values must be in {0, 1, 2}")
    return labels.astype(np.uint8)


@dataclass(frozen=True)
class Box:
    """Axis-aligned pixel region ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ValidationError(f"empty region {self}")

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y1), slice(self.x0, self.x1)

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def inside(self, width: int, height: int) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= width and self.y1 <= height

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        m = np.zeros(shape, dtype=bool)
        m[self.slices] = True
        return m

    def to_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]
