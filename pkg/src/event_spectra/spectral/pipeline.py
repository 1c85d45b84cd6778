"""End-to-end captures: sweep-based band images, spectral cubes and chart reconstructions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.types import ValidationError
from ..projector import ProjectorConfig
from ..scene import RGB_WAVELENGTHS, RigGeometry, SceneModel
from ..sensor import SensorConfig, simulate
from .color import reconstruct_rgb
from .cube import SpectralCube
from .sweep import (
    SweepPlan,
    capture_calibration,
    chopped_projector,
    design_sweep,
    event_count_reflectance,
    geometric_targets,
    reflectance_from_sweep,
    run_sweep,
)


@dataclass(frozen=True)
class SweepSettings:
    """How to plan a sweep per band.

    Levels put firing boundaries at ``levels`` reflectances spaced
    geometrically over ``[lo, hi]``; ``grays`` calibration patches spaced
    the same way over ``[lo, 1]`` map levels back to reflectance.
    """

    parameter: str = "diff_on"
    levels: int = 32
    lo: float = 0.02
    hi: float = 0.99
    duration: float = 0.5
    grays: int = 64

    def __post_init__(self):
        if self.levels < 2:
            raise ValidationError("sweep.levels must be >= 2")
        if not (0 < self.lo < self.hi <= 1):
            raise ValidationError("sweep range must satisfy 0 < lo < hi <= 1")
        if self.grays < 2:
            raise ValidationError("sweep.grays must be >= 2")
        if not self.duration > 0:
            raise ValidationError("sweep.duration must be > 0")

    def plan(self, sensor: SensorConfig, projector: ProjectorConfig, wavelength: float,
             ambient: float = 1.0) -> SweepPlan:
        targets = geometric_targets(self.lo, self.hi, self.levels)
        return design_sweep(self.parameter, targets, sensor, projector, wavelength,
                            self.duration, ambient)

    def gray_values(self) -> np.ndarray:
        return np.geomspace(self.lo, 1.0, self.grays)


def sweep_reflectance(scene: SceneModel, rig: RigGeometry, projector: ProjectorConfig,
                      sensor: SensorConfig, wavelength: float,
                      settings: SweepSettings = SweepSettings()):
    """Lower-bound reflectance image of one band.

    Returns:
        (image, plan, calibration)
    """
    ambient = scene.ambient_at(wavelength)
    plan = settings.plan(sensor, projector, wavelength, ambient)
    cal = capture_calibration(projector, sensor, plan, settings.gray_values(), ambient=ambient)
    fired = run_sweep(scene, rig, projector, sensor, plan)
    return reflectance_from_sweep(fired, plan, cal), plan, cal


def measure_cube(scene: SceneModel, rig: RigGeometry, projector: ProjectorConfig,
                 sensor: SensorConfig, wavelengths=None,
                 settings: SweepSettings = SweepSettings()) -> SpectralCube:
    wavelengths = projector.wavelengths if wavelengths is None else wavelengths
    pairs = []
    for wl in wavelengths:
        img, _, _ = sweep_reflectance(scene, rig, projector, sensor, wl, settings)
        pairs.append((float(wl), img))
    meta = {"method": "sweep", "parameter": settings.parameter, "levels": settings.levels}
    return SpectralCube.from_bands(pairs, meta)


def count_reflectance(scene: SceneModel, rig: RigGeometry, projector: ProjectorConfig,
                      sensor: SensorConfig, wavelength: float, duration: float,
                      panel_region, panel_reflectance: float = 1.0) -> np.ndarray:
    """Event-counting baseline for one band under the chopped source."""
    src = chopped_projector(projector, wavelength)
    out = simulate(scene, rig, src, sensor, duration, wavelength=wavelength, initial_state="steady")
    return event_count_reflectance(out.stream, duration, panel_region, panel_reflectance)


def chart_capture(scene: SceneModel, rig: RigGeometry, projector: ProjectorConfig,
                  sensor: SensorConfig, method: str = "sweep",
                  settings: SweepSettings = SweepSettings(),
                  wavelengths=RGB_WAVELENGTHS, count_duration: float | None = None):
    """Raw 8-bit RGB reconstruction of a scene from red, green and blue captures.

    ``method`` is ``"sweep"`` or ``"count"``.  The counting baseline runs at
    the sensor's own biases for the total time a sweep would take and is
    normalized to the scene's ``panel`` region.

    Returns:
        (rgb image, per-band float images)
    """
    bands = []
    for wl in wavelengths:
        if method == "sweep":
            img, _, _ = sweep_reflectance(scene, rig, projector, sensor, wl, settings)
        elif method == "count":
            dur = count_duration if count_duration is not None else settings.duration * settings.levels
            panel = scene.regions["panel"]
            pref = float(scene.meta.get("panel_reflectance", 1.0))
            img = count_reflectance(scene, rig, projector, sensor, wl, dur, panel, pref)
        else:
            raise ValidationError(f"unknown capture method {method!r}")
        bands.append(img)
    return reconstruct_rgb(*bands), bands
