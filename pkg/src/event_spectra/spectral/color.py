"""Color reconstruction, chart correction (white balance + curve) and CIE 1976 color error."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core.types import Box, ValidationError

# IEC 61966-2-1 linear sRGB -> CIE XYZ (D65)
SRGB_TO_XYZ = np.array([
    [0.4124, 0.3576, 0.1805],
    [0.2126, 0.7152, 0.0722],
    [0.0193, 0.1192, 0.9505],
])
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)
# reference white as the image of sRGB white, so white maps to L* = 100, a* = b* = 0
D65_WHITE = SRGB_TO_XYZ.sum(axis=1)
_DELTA = 6.0 / 29.0

STAGES = ("raw", "wb", "curve")


def srgb_to_linear(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.abs(c) ** (1 / 2.4) * np.sign(c) - 0.055)


def _f(t):
    return np.where(t > _DELTA ** 3, np.cbrt(t), t / (3 * _DELTA ** 2) + 4.0 / 29.0)


def _f_inv(t):
    return np.where(t > _DELTA, t ** 3, 3 * _DELTA ** 2 * (t - 4.0 / 29.0))


def xyz_to_lab(xyz, white=D65_WHITE):
    xyz = np.asarray(xyz, dtype=np.float64) / white
    fx, fy, fz = _f(xyz[..., 0]), _f(xyz[..., 1]), _f(xyz[..., 2])
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def lab_to_xyz(lab, white=D65_WHITE):
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    return np.stack([_f_inv(fx), _f_inv(fy), _f_inv(fz)], axis=-1) * white


def rgb8_to_lab(rgb):
    """8-bit sRGB (any float or int array with a trailing axis of 3) to CIELAB."""
    lin = srgb_to_linear(np.asarray(rgb, dtype=np.float64) / 255.0)
    return xyz_to_lab(lin @ SRGB_TO_XYZ.T)


def lab_to_rgb8(lab):
    """Inverse of :func:`rgb8_to_lab`, unclamped and unrounded."""
    lin = lab_to_xyz(lab) @ XYZ_TO_SRGB.T
    return linear_to_srgb(lin) * 255.0


def delta_e76(rgb_a, rgb_b):
    """Euclidean CIELAB distance between 8-bit sRGB colors (vectorized)."""
    d = rgb8_to_lab(rgb_a) - rgb8_to_lab(rgb_b)
    out = np.sqrt(np.sum(d * d, axis=-1))
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------ reconstruction


def reconstruct_rgb(red, green, blue) -> np.ndarray:
    """Stack linear band images into an 8-bit RGB image (clamp, round half up)."""
    bands = [np.asarray(b, dtype=np.float64) for b in (red, green, blue)]
    if not (bands[0].shape == bands[1].shape == bands[2].shape) or bands[0].ndim != 2:
        raise ValidationError("band images must be 2-D and of equal size")
    img = np.clip(np.stack(bands, axis=-1), 0.0, 1.0)
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


def _to_uint8(img) -> np.ndarray:
    return np.floor(np.clip(img, 0.0, 255.0) + 0.5).astype(np.uint8)


def block_means(image, regions: Sequence[Box]) -> np.ndarray:
    """Mean color of each region, shape ``(n, 3)``."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    out = []
    for b in regions:
        if not b.inside(w, h):
            raise ValidationError(f"region {b} outside {w}x{h} image")
        out.append(img[b.slices].reshape(-1, img.shape[-1]).mean(axis=0))
    return np.array(out)


def _gray_truths(truths, n: int) -> np.ndarray:
    t = np.asarray(truths, dtype=np.float64)
    if t.ndim == 1:
        t = np.repeat(t[:, None], 3, axis=1)
    if t.shape != (n, 3):
        raise ValidationError("one gray truth (or RGB triple) per patch required")
    return t


def white_balance(image, gray_regions: Sequence[Box], gray_truths):
    """Per-channel gains from gray patches, applied multiplicatively and clamped.

    Returns:
        (balanced 8-bit image, gains of shape (3,))
    """
    if len(gray_regions) < 1:
        raise ValidationError("white balance needs at least one gray patch")
    measured = block_means(image, gray_regions)
    truth = _gray_truths(gray_truths, len(gray_regions))
    if np.any(measured <= 0):
        raise ValidationError("gray patch with zero measured mean")
    gains = (truth / measured).mean(axis=0)
    out = _to_uint8(np.asarray(image, dtype=np.float64) * gains)
    return out, gains


@dataclass(frozen=True)
class ResponseCurve:
    """Monotone piecewise-linear map per channel from measured to true values.

    Outside the knot range the end values are held (the extrapolation
    plateau is ``[knots_x[c][0], knots_x[c][-1]]``).
    """

    knots_x: tuple[tuple[float, ...], ...]
    knots_y: tuple[tuple[float, ...], ...]

    def apply(self, image) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        out = np.empty_like(img)
        for c in range(img.shape[-1]):
            out[..., c] = np.interp(img[..., c], self.knots_x[c], self.knots_y[c])
        return out

    def plateaus(self) -> list[tuple[float, float]]:
        return [(x[0], x[-1]) for x in self.knots_x]


def fit_curve(measured, truth) -> tuple[np.ndarray, np.ndarray]:
    """Monotone knots from (measured, truth) pairs of one channel.

    Equal measured values are merged (their truths averaged).  Raises if the
    measured values do not increase with the truths.
    """
    m = np.asarray(measured, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    order = np.lexsort((m, t))
    m, t = m[order], t[order]
    if np.any(np.diff(m) < 0):
        raise ValidationError("measured gray means are not monotone in the true values")
    xs, inv = np.unique(m, return_inverse=True)
    ys = np.bincount(inv, weights=t) / np.bincount(inv)
    return xs, ys


def linearize_curve(image, gray_regions: Sequence[Box], gray_truths):
    """Fit and apply a per-channel response curve through the gray patches.

    A knot at (0, 0) is added below the darkest patch; above the brightest
    patch the curve holds its end value.

    Returns:
        (corrected 8-bit image, ResponseCurve)
    """
    if len(gray_regions) < 3:
        raise ValidationError("curve linearization needs at least 3 gray patches")
    measured = block_means(image, gray_regions)
    truth = _gray_truths(gray_truths, len(gray_regions))
    kx, ky = [], []
    for c in range(3):
        xs, ys = fit_curve(measured[:, c], truth[:, c])
        # no light reads zero: anchor black so colors darker than the darkest patch are not clipped
        if xs[0] > 0 and ys[0] > 0:
            xs, ys = np.r_[0.0, xs], np.r_[0.0, ys]
        kx.append(tuple(xs))
        ky.append(tuple(ys))
    curve = ResponseCurve(tuple(kx), tuple(ky))
    return _to_uint8(curve.apply(image)), curve


@dataclass(frozen=True)
class ColorCalibration:
    gains: tuple[float, float, float]
    curve: ResponseCurve

    def __post_init__(self):
        if any(g <= 0 for g in self.gains):
            raise ValidationError("white-balance gains must be > 0")

    def apply(self, image) -> np.ndarray:
        wb = _to_uint8(np.asarray(image, dtype=np.float64) * np.asarray(self.gains))
        return _to_uint8(self.curve.apply(wb))


def correct_chart(image, gray_regions: Sequence[Box], gray_truths,
                  raw_encoding: str = "linear") -> tuple[dict, ColorCalibration]:
    """Images after each correction stage (raw, wb, curve) and the fitted calibration.

    ``gray_truths`` are the 8-bit sRGB values of the gray patches.  With a
    ``linear`` raw encoding (band reflectance times 255, as produced by
    :func:`reconstruct_rgb`) white balance targets the linear gray levels so
    that it only equalizes the channels; the curve stage then maps onto the
    sRGB truths.  Gray patches measuring zero in some channel carry no gain
    information and are left out of the white balance.
    """
    if raw_encoding not in ("linear", "srgb"):
        raise ValidationError("raw_encoding must be 'linear' or 'srgb'")
    raw = np.asarray(image)
    measured = block_means(raw, gray_regions)
    truth = _gray_truths(gray_truths, len(gray_regions))
    wb_truth = srgb_to_linear(truth / 255.0) * 255.0 if raw_encoding == "linear" else truth
    usable = np.all(measured > 0, axis=1)
    if not usable.any():
        raise ValidationError("every gray patch measures zero in some channel")
    wb, gains = white_balance(raw, [b for b, u in zip(gray_regions, usable) if u], wb_truth[usable])
    cur, curve = linearize_curve(wb, gray_regions, truth)
    return {"raw": raw, "wb": wb, "curve": cur}, ColorCalibration(tuple(gains), curve)


# ------------------------------------------------------------ chart error


@dataclass(frozen=True)
class ChartError:
    stage: str
    delta_e: np.ndarray        # per block
    rmse: tuple[float, float, float]  # per channel, 8-bit scale

    @property
    def mean_delta_e(self) -> float:
        return float(np.mean(self.delta_e))

    @property
    def mean_rmse(self) -> float:
        return float(np.mean(self.rmse))


def chart_error(reconstructed, truth, block_regions: Sequence[Box], stage: str = "raw") -> ChartError:
    """Per-block color error of a reconstructed chart.

    ``truth`` is either a chart image or one sRGB triple per block.  Block
    colors are region means; the error is ΔE76 per block and RMSE per
    channel over blocks.
    """
    if stage not in STAGES:
        raise ValidationError(f"stage must be one of {STAGES}")
    if len(block_regions) == 0:
        raise ValidationError("no chart blocks given")
    rec = block_means(reconstructed, block_regions)
    t = np.asarray(truth, dtype=np.float64)
    if t.ndim == 3:
        t = block_means(t, block_regions)
    if t.shape != rec.shape:
        raise ValidationError("truth needs one color per block")
    de = delta_e76(rec, t)
    rmse = np.sqrt(np.mean((rec - t) ** 2, axis=0))
    return ChartError(stage, np.atleast_1d(de), tuple(float(v) for v in rmse))


def chart_report(images: dict, truth, block_regions: Sequence[Box]) -> list[ChartError]:
    return [chart_error(images[s], truth, block_regions, s) for s in STAGES if s in images]
