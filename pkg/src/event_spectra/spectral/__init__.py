"""Reflectance and color recovery from bias sweeps, plus the event-counting baseline."""

from .color import (
    ChartError,
    ColorCalibration,
    ResponseCurve,
    chart_error,
    correct_chart,
    delta_e76,
    linearize_curve,
    reconstruct_rgb,
    rgb8_to_lab,
    white_balance,
)
from .cube import SpectralCube, normalize_to_reference, spectral_signature
from .sweep import (
    SweepPlan,
    calibrate_sweep,
    capture_calibration,
    design_sweep,
    event_count_reflectance,
    reflectance_from_sweep,
    run_sweep,
)
from .pipeline import chart_capture, measure_cube, sweep_reflectance

__all__ = [
    "ChartError", "ColorCalibration", "ResponseCurve", "SpectralCube", "SweepPlan",
    "calibrate_sweep", "capture_calibration", "chart_capture", "chart_error", "correct_chart",
    "delta_e76", "design_sweep", "event_count_reflectance", "linearize_curve", "measure_cube",
    "normalize_to_reference", "reconstruct_rgb", "reflectance_from_sweep", "rgb8_to_lab",
    "run_sweep", "spectral_signature", "sweep_reflectance", "white_balance",
]
