"""Active illumination: a raster point-scanning projector and a chopped full-field source.

The scanning projector lights one projector pixel per dwell interval in
row-major order.  Which camera pixel that light lands on follows from the
scene heightfield: every camera pixel is back-projected, mapped into the
projector image of the rectified rig and assigned to its nearest projector
pixel.  Projector-side occlusion is resolved with a z-buffer at projector
resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core.types import ValidationError
from .scene import RGB_WAVELENGTHS, RigGeometry, SceneModel

MODES = ("scanning", "chopped")

# visibility slack for the z-buffer test, relative to depth
OCCLUSION_BIAS = 0.01


@dataclass(frozen=True)
class ProjectorConfig:
    """Illumination settings.

    ``band_intensity`` is I_p, either one value for every band or one value
    per entry of ``wavelengths``.
    """

    resolution: tuple[int, int] = (1920, 720)
    frame_rate: float = 60.0
    wavelengths: tuple[float, ...] = RGB_WAVELENGTHS
    band_intensity: float | tuple[float, ...] = 4.0
    mode: str = "scanning"
    chopper_rate: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "resolution", tuple(int(v) for v in self.resolution))
        object.__setattr__(self, "wavelengths", tuple(float(w) for w in self.wavelengths))
        if self.mode not in MODES:
            raise ValidationError(f"projector.mode must be one of {MODES}, got {self.mode!r}")
        if not self.frame_rate > 0:
            raise ValidationError("projector.frame_rate must be > 0")
        if self.mode == "scanning" and (len(self.resolution) != 2 or min(self.resolution) <= 0):
            raise ValidationError("projector.resolution must be two positive integers")
        if self.mode == "chopped" and not self.chopper_rate > 0:
            raise ValidationError("projector.chopper_rate must be > 0")
        if not self.wavelengths:
            raise ValidationError("projector.wavelengths must not be empty")
        ip = self.band_intensity
        if isinstance(ip, (list, tuple)):
            ip = tuple(float(v) for v in ip)
            if len(ip) != len(self.wavelengths):
                raise ValidationError("projector.band_intensity needs one value per wavelength")
            object.__setattr__(self, "band_intensity", ip)
            vals = ip
        else:
            vals = (float(ip),)
        if any(v < 0 for v in vals):
            raise ValidationError("projector.band_intensity must be >= 0")

    @property
    def dwell(self) -> float:
        w, h = self.resolution
        return 1.0 / (self.frame_rate * w * h)

    def intensity_at(self, wavelength: float) -> float:
        for i, w in enumerate(self.wavelengths):
            if abs(w - wavelength) < 1e-9:
                ip = self.band_intensity
                return float(ip[i]) if isinstance(ip, tuple) else float(ip)
        raise ValidationError(f"wavelength {wavelength} nm not configured (have {list(self.wavelengths)})")


def frame_rate_for_dwell(dwell: float, resolution: tuple[int, int]) -> float:
    """Frame rate at which a full raster scan has the given per-pixel dwell."""
    return 1.0 / (dwell * resolution[0] * resolution[1])


@dataclass(frozen=True)
class ScanSchedule:
    start: float
    dwell: float
    width: int
    height: int

    def __post_init__(self):
        if not self.dwell > 0:
            raise ValidationError("dwell must be > 0")

    @classmethod
    def from_config(cls, config: ProjectorConfig, start: float = 0.0) -> "ScanSchedule":
        return cls(float(start), config.dwell, *config.resolution)

    @property
    def pixels_per_frame(self) -> int:
        return self.width * self.height

    @property
    def frame_time(self) -> float:
        return self.dwell * self.pixels_per_frame


def time_of_pixel(schedule: ScanSchedule, col, row, frame_index=0):
    """Start of the dwell interval in which projector pixel (col, row) is lit."""
    col, row, frame = (np.asarray(v, dtype=np.int64) for v in (col, row, frame_index))
    if np.any((col < 0) | (col >= schedule.width) | (row < 0) | (row >= schedule.height) | (frame < 0)):
        raise ValidationError("projector pixel or frame index out of range")
    t = schedule.start + frame * schedule.frame_time + (row * schedule.width + col) * schedule.dwell
    return float(t) if np.ndim(t) == 0 else t


def _time_of_index(schedule: ScanSchedule, n):
    frame, idx = np.divmod(n, schedule.pixels_per_frame)
    return schedule.start + frame * schedule.frame_time + idx * schedule.dwell


def scan_position_at(schedule: ScanSchedule, t):
    """Projector pixel ``(col, row, frame)`` lit at time ``t`` (seconds).

    Exact inverse of :func:`time_of_pixel`: the returned pixel satisfies
    ``time_of_pixel(...) <= t < time_of_pixel(...) + dwell`` in floating point.
    """
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < schedule.start):
        raise ValidationError(f"time before schedule start {schedule.start}")
    n = np.floor((t - schedule.start) / schedule.dwell).astype(np.int64)
    # repair floor() rounding against the forward formula
    n = np.where(_time_of_index(schedule, n + 1) <= t, n + 1, n)
    n = np.where(_time_of_index(schedule, n) > t, n - 1, n)
    frame, idx = np.divmod(n, schedule.pixels_per_frame)
    row, col = np.divmod(idx, schedule.width)
    if t.ndim == 0:
        return int(col), int(row), int(frame)
    return col, row, frame


@dataclass(frozen=True)
class Correspondence:
    """Camera-pixel to projector-pixel map of a scene under a rig.

    ``col``/``row`` hold the nearest projector pixel per camera pixel;
    ``visible`` marks pixels that fall inside the projector frame and pass
    the occlusion test.
    """

    col: np.ndarray
    row: np.ndarray
    visible: np.ndarray
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)

    def projector_index(self, width: int) -> np.ndarray:
        return self.row.astype(np.int64) * width + self.col


def projector_coordinates(scene: SceneModel, rig: RigGeometry):
    """Continuous projector image coordinates ``(u, v)`` of every camera pixel."""
    cam, proj = rig.camera, rig.projector
    h, w = scene.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    z = np.where(scene.depth.valid, scene.depth.depth, np.nan)
    X = (xs - cam.cx) * z / cam.f
    Y = (ys - cam.cy) * z / cam.f
    u = proj.f * (X - rig.baseline) / z + proj.cx
    v = proj.f * Y / z + proj.cy
    return u, v


def projector_correspondence(scene: SceneModel, rig: RigGeometry) -> Correspondence:
    cam, proj = rig.camera, rig.projector
    if scene.shape != (cam.height, cam.width):
        raise ValidationError(
            f"scene {scene.width}x{scene.height} does not match camera {cam.width}x{cam.height}"
        )
    u, v = projector_coordinates(scene, rig)
    valid = scene.depth.valid
    with np.errstate(invalid="ignore"):
        col = np.floor(np.where(valid, u, -1.0) + 0.5).astype(np.int64)
        row = np.floor(np.where(valid, v, -1.0) + 0.5).astype(np.int64)
    inside = valid & (col >= 0) & (col < proj.width) & (row >= 0) & (row < proj.height)

    # z-buffer: each camera pixel's footprint covers an s x s patch of projector pixels
    s = proj.f / cam.f
    z = scene.depth.depth
    zbuf = np.full((proj.height, proj.width), np.inf)
    idx = np.flatnonzero(valid.ravel())
    uu, vv, zz = u.ravel()[idx], v.ravel()[idx], z.ravel()[idx]
    c_lo = np.minimum(np.ceil(uu - s / 2), np.floor(uu + 0.5)).astype(np.int64)
    c_hi = np.maximum(np.ceil(uu + s / 2) - 1, np.floor(uu + 0.5)).astype(np.int64)
    r_lo = np.minimum(np.ceil(vv - s / 2), np.floor(vv + 0.5)).astype(np.int64)
    r_hi = np.maximum(np.ceil(vv + s / 2) - 1, np.floor(vv + 0.5)).astype(np.int64)
    span_c = int((c_hi - c_lo).max(initial=0)) + 1
    span_r = int((r_hi - r_lo).max(initial=0)) + 1
    for dr in range(span_r):
        for dc in range(span_c):
            cc, rr = c_lo + dc, r_lo + dr
            ok = (cc <= c_hi) & (rr <= r_hi) & (cc >= 0) & (cc < proj.width) & (rr >= 0) & (rr < proj.height)
            np.minimum.at(zbuf, (rr[ok], cc[ok]), zz[ok])

    visible = inside.copy()
    ins = np.flatnonzero(inside.ravel())
    front = zbuf[row.ravel()[ins], col.ravel()[ins]]
    visible.ravel()[ins] = z.ravel()[ins] <= front * (1.0 + OCCLUSION_BIAS)
    col = np.where(visible, col, -1)
    row = np.where(visible, row, -1)
    return Correspondence(col, row, visible, u, v)


def chopper_is_on(t, rate: float):
    """Square wave of 50 % duty: on during the first half of every period."""
    phase = np.mod(np.asarray(t, dtype=np.float64) * rate, 1.0)
    # guard period boundaries against float error in t * rate
    on = (phase < 0.5 - 1e-9) | (phase > 1.0 - 1e-9)
    return bool(on) if on.ndim == 0 else on


def irradiance(scene: SceneModel, rig: RigGeometry, config: ProjectorConfig, t: float,
               wavelength: float, corr: Correspondence | None = None,
               schedule: ScanSchedule | None = None) -> np.ndarray:
    """Incident light per camera pixel before reflectance: I_a plus I_p where lit."""
    ip = config.intensity_at(wavelength)
    ia = scene.ambient_at(wavelength)
    if config.mode == "chopped":
        return np.full(scene.shape, ia + ip * chopper_is_on(t, config.chopper_rate))
    if corr is None:
        corr = projector_correspondence(scene, rig)
    schedule = schedule or ScanSchedule.from_config(config)
    col, row, _ = scan_position_at(schedule, t)
    lit = corr.visible & (corr.col == col) & (corr.row == row)
    return ia + ip * lit.astype(np.float64)
