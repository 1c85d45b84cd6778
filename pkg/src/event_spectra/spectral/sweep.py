"""Bias sweeps: per-pixel reflectance lower bounds from which pixels still fire.

Under a chopped source the follower of a pixel with reflectance T swings by
an amplitude A(T) that grows with T because brighter pixels have more
bandwidth.  A pixel emits ON events only if A(T) reaches the effective ON
threshold.  Raising DIFF_ON (or lowering PR bias) step by step and recording
which pixels still fire therefore ranks pixels by reflectance; a gray wedge
captured under the same sweep turns the hardest level a pixel survives into
a reflectance value.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..core.types import Box, EventStream, ValidationError
from ..projector import ProjectorConfig
from ..scene import PinholeModel, RigGeometry, SceneModel, make_wedge_scene
from ..sensor import (
    SensorConfig,
    _half_period_steps,
    chopped_amplitude,
    default_dt,
    simulate,
)

PARAMETERS = ("diff_on", "pr_bias")


@dataclass(frozen=True)
class SweepPlan:
    """Levels of one swept bias.

    ``duration`` is the simulated capture time per level in seconds.
    """

    parameter: str
    values: tuple[float, ...]
    duration: float = 0.5
    wavelength: float = 650.0

    def __post_init__(self):
        if self.parameter not in PARAMETERS:
            raise ValidationError(f"sweep.parameter must be one of {PARAMETERS}")
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) < 2:
            raise ValidationError("sweep needs at least 2 levels")
        d = np.diff(vals)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise ValidationError("sweep values must be strictly monotone")
        if self.parameter == "pr_bias" and min(vals) <= 0:
            raise ValidationError("pr_bias levels must be > 0")
        if not self.duration > 0:
            raise ValidationError("sweep.duration must be > 0")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def difficulty(self) -> np.ndarray:
        """Rank of each level from easiest (0) to hardest (K-1) to fire."""
        v = np.asarray(self.values)
        key = v if self.parameter == "diff_on" else -v
        return np.argsort(np.argsort(key))

    def sensor_at(self, sensor: SensorConfig, k: int) -> SensorConfig:
        return sensor.with_(**{self.parameter: self.values[k]})


def chopped_projector(projector: ProjectorConfig, wavelength: float) -> ProjectorConfig:
    """The full-field chopped source used for sweeps, at the plan's wavelength."""
    ip = projector.intensity_at(wavelength)
    return replace(projector, mode="chopped", wavelengths=(float(wavelength),), band_intensity=ip)


def flat_rig(width: int, height: int, baseline: float = 0.1) -> RigGeometry:
    """Rig for full-field captures where geometry plays no role."""
    cam = PinholeModel(500.0, width / 2, height / 2, width, height)
    return RigGeometry(cam, cam, baseline)


def run_sweep(scene: SceneModel, rig: RigGeometry, projector: ProjectorConfig,
              sensor: SensorConfig, plan: SweepPlan, engine: str = "segments") -> np.ndarray:
    """Fired maps of every level, shape ``(K, H, W)``.

    Each level starts from the chopped steady state with fresh sensor state,
    so a pixel fires iff its steady swing reaches that level's threshold.
    """
    src = chopped_projector(projector, plan.wavelength)
    maps = []
    for k in range(len(plan)):
        out = simulate(scene, rig, src, plan.sensor_at(sensor, k), plan.duration,
                       wavelength=plan.wavelength, initial_state="steady", engine=engine,
                       events=False)
        maps.append(out.on_counts > 0)
    return np.stack(maps)


def _hardest_fired(fired: np.ndarray, plan: SweepPlan) -> np.ndarray:
    fired = np.asarray(fired, dtype=bool)
    if fired.shape[0] != len(plan):
        raise ValidationError(f"{fired.shape[0]} fired maps for {len(plan)} sweep levels")
    diff = plan.difficulty
    order = np.argsort(diff)              # level indices, easiest first
    ranked = fired[order]                 # axis 0 now in difficulty order
    any_fired = ranked.any(axis=0)
    last = len(plan) - 1 - np.argmax(ranked[::-1], axis=0)
    return np.where(any_fired, order[last], -1)


def region_fired(fired: np.ndarray, box: Box, fraction: float = 0.5) -> np.ndarray:
    """Per level: did at least ``fraction`` of the region's pixels fire."""
    return np.asarray(fired)[(slice(None),) + box.slices].mean(axis=(1, 2)) >= fraction


def calibrate_sweep(fired: np.ndarray, plan: SweepPlan, regions: Sequence[Box],
                    values: Sequence[float]) -> np.ndarray:
    """Reflectance assigned to each sweep level from a captured gray wedge.

    Level k maps to the dimmest wedge gray that fires at k; levels no gray
    survives map to the brightest gray.  The result is made non-decreasing
    along sweep difficulty.
    """
    values = np.asarray(values, dtype=np.float64)
    if len(regions) != len(values) or len(values) == 0:
        raise ValidationError("one gray value per wedge region required")
    fires = np.stack([region_fired(fired, b) for b in regions], axis=1)  # (K, n_grays)
    cal = np.where(fires, values[None, :], np.inf).min(axis=1)
    cal = np.where(np.isfinite(cal), cal, values.max())
    order = np.argsort(plan.difficulty)
    cal[order] = np.maximum.accumulate(cal[order])
    return cal


def reflectance_from_sweep(fired: np.ndarray, plan: SweepPlan, calibration) -> np.ndarray:
    """Per-pixel lower-bound reflectance from the hardest level the pixel survived."""
    cal = np.asarray(calibration, dtype=np.float64)
    if cal.shape != (len(plan),):
        raise ValidationError("calibration needs one value per sweep level")
    k = _hardest_fired(fired, plan)
    return np.where(k >= 0, cal[np.maximum(k, 0)], 0.0)


def calibration_bins(calibration, plan: SweepPlan) -> np.ndarray:
    """Width of the reflectance bin above each level (next harder level minus this one)."""
    cal = np.asarray(calibration, dtype=np.float64)
    order = np.argsort(plan.difficulty)
    s = cal[order]
    widths = np.empty_like(s)
    widths[:-1] = np.diff(s)
    widths[-1] = 1.0 - s[-1]
    out = np.empty_like(widths)
    out[order] = widths
    return out


def capture_calibration(projector: ProjectorConfig, sensor: SensorConfig, plan: SweepPlan,
                        grays: Sequence[float], patch: int = 2, height: int = 2,
                        ambient: float = 1.0, engine: str = "segments") -> np.ndarray:
    """Sweep a synthetic gray wedge with the same settings and calibrate from it."""
    wedge = make_wedge_scene(grays, patch=patch, height=height, ambient=ambient)
    rig = flat_rig(wedge.width, wedge.height)
    s = sensor.with_(width=wedge.width, height=wedge.height)
    fired = run_sweep(wedge, rig, projector, s, plan, engine=engine)
    return calibrate_sweep(fired, plan, wedge.regions["wedge"], grays)


# --------------------------------------------------------------- planning


def sweep_amplitude(T, sensor: SensorConfig, projector: ProjectorConfig, wavelength: float,
                    ambient: float = 1.0):
    """Steady chopped swing A(T) predicted for the given sensor settings."""
    src = chopped_projector(projector, wavelength)
    dt = sensor.dt_sim if sensor.dt_sim is not None else default_dt(src)
    h = _half_period_steps(src, dt)
    ip = src.intensity_at(wavelength)
    return chopped_amplitude(T, ambient, ambient + ip, sensor, dt, h)


def design_sweep(parameter: str, targets: Sequence[float], sensor: SensorConfig,
                 projector: ProjectorConfig, wavelength: float, duration: float = 0.5,
                 ambient: float = 1.0) -> SweepPlan:
    """Plan levels whose firing boundaries sit at the target reflectances.

    For ``diff_on`` the level is the offset that puts the ON threshold at
    A(target); for ``pr_bias`` it is the bias at which A(target) equals the
    ON threshold, found by bisection in log bias.  Levels are ordered from
    easiest to hardest.
    """
    t = np.sort(np.asarray(targets, dtype=np.float64))
    if parameter == "diff_on":
        amp = sweep_amplitude(t, sensor, projector, wavelength, ambient)
        values = amp - sensor.c_on
        # tiny slack keeps a target-valued pixel on the firing side
        values = values - 1e-7
    elif parameter == "pr_bias":
        thr = sensor.c_on + sensor.diff_on
        lo = np.full(t.shape, np.log(1e-6))
        hi = np.full(t.shape, np.log(1e3))
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            amp = np.array([
                sweep_amplitude(ti, sensor.with_(pr_bias=float(np.exp(m))), projector, wavelength, ambient)
                for ti, m in zip(t, mid)
            ])
            up = amp >= thr
            hi = np.where(up, mid, hi)
            lo = np.where(up, lo, mid)
        values = np.exp(hi)   # brighter targets need less bias: already easiest first
        values = values * (1 + 1e-7)
    else:
        raise ValidationError(f"sweep.parameter must be one of {PARAMETERS}")
    return SweepPlan(parameter, tuple(values), duration, wavelength)


def geometric_targets(lo: float, hi: float, k: int) -> np.ndarray:
    return np.geomspace(lo, hi, k)


# --------------------------------------------------------------- baseline


def event_count_reflectance(stream: EventStream, duration: float, panel_region,
                            panel_reflectance: float = 1.0) -> np.ndarray:
    """Event-counting baseline: ON counts relative to the panel's mean count.

    The result is scaled by ``panel_reflectance`` (1.0 gives the plain ratio).
    """
    if not duration > 0:
        raise ValidationError("duration must be > 0")
    counts = stream.count_image(1).astype(np.float64)
    if isinstance(panel_region, Box):
        if not panel_region.inside(stream.width, stream.height):
            raise ValidationError("panel region outside the image")
        sel = counts[panel_region.slices]
    else:
        mask = np.asarray(panel_region, dtype=bool)
        if not mask.any():
            raise ValidationError("empty panel region")
        sel = counts[mask]
    ref = sel.mean()
    if ref == 0:
        return np.zeros_like(counts)
    return counts / ref * panel_reflectance
