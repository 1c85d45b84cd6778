"""Per-pixel leaves / branches / background segmentation with a diagonal Gaussian classifier.

Features per pixel: linear R, G, B; depth divided by the scene's median
depth; and the standard deviation of normalized depth in a 5 x 5 window of
valid pixels.  A model uses one of three feature subsets (``rgb``,
``depth``, ``rgbd``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core.types import DepthMap, ValidationError, as_labelmap
from .metrics import IoUReport, confusion_matrix, iou_from_confusion
from .spectral.color import srgb_to_linear

FEATURE_NAMES = ("r", "g", "b", "depth", "depth_std")
SUBSETS = {"rgb": (0, 1, 2), "depth": (3, 4), "rgbd": (0, 1, 2, 3, 4)}
DEPTH_FEATURES = (3, 4)
N_CLASSES = 3
VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class Features:
    values: np.ndarray   # (H, W, 5)
    valid: np.ndarray    # depth validity, (H, W)

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


def local_std(values: np.ndarray, mask: np.ndarray, size: int = 5) -> np.ndarray:
    """Standard deviation over the valid pixels of each ``size`` x ``size`` window (two-pass)."""
    r = size // 2
    v = np.pad(np.where(mask, values, 0.0), r)
    m = np.pad(mask.astype(np.float64), r)
    wv = sliding_window_view(v, (size, size))
    wm = sliding_window_view(m, (size, size))
    n = wm.sum(axis=(-1, -2))
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = wv.sum(axis=(-1, -2)) / n
        var = (wm * (wv - mean[..., None, None]) ** 2).sum(axis=(-1, -2)) / n
    # constant windows are exactly flat; the rounded mean would leave ~1e-17
    hi = np.where(wm > 0, wv, -np.inf).max(axis=(-1, -2))
    lo = np.where(wm > 0, wv, np.inf).min(axis=(-1, -2))
    return np.where((n > 0) & (hi > lo), np.sqrt(var), 0.0)


def extract_features(rgb, depth: DepthMap, window: int = 5) -> Features:
    """Feature field of an 8-bit sRGB image and an aligned depth map.

    Invalid-depth pixels get the median depth (normalized value 1) and zero
    local spread, and are flagged in ``valid``.
    """
    img = np.asarray(rgb)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError("rgb must be an (H, W, 3) image")
    if img.shape[:2] != depth.shape:
        raise ValidationError(f"rgb {img.shape[:2]} and depth {depth.shape} differ")
    lin = srgb_to_linear(img.astype(np.float64) / 255.0)
    valid = depth.valid
    med = float(np.median(depth.depth[valid])) if valid.any() else 1.0
    z = np.where(valid, depth.depth / med, 1.0)
    std = np.where(valid, local_std(z, valid, window), 0.0)
    values = np.concatenate([lin, z[..., None], std[..., None]], axis=-1)
    return Features(values, valid.copy())


@dataclass(frozen=True)
class ClassifierModel:
    subset: str
    means: np.ndarray       # (3, d)
    variances: np.ndarray   # (3, d)
    priors: np.ndarray      # (3,)

    def __post_init__(self):
        if self.subset not in SUBSETS:
            raise ValidationError(f"subset must be one of {sorted(SUBSETS)}")
        d = len(SUBSETS[self.subset])
        means = np.asarray(self.means, dtype=np.float64)
        var = np.asarray(self.variances, dtype=np.float64)
        pri = np.asarray(self.priors, dtype=np.float64)
        if means.shape != (N_CLASSES, d) or var.shape != (N_CLASSES, d) or pri.shape != (N_CLASSES,):
            raise ValidationError("model parameter shapes do not match the subset")
        if np.any(var <= 0):
            raise ValidationError("variances must be > 0")
        if abs(pri.sum() - 1.0) > 1e-9 or np.any(pri < 0):
            raise ValidationError("priors must be non-negative and sum to 1")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "priors", pri)

    @property
    def features(self) -> tuple[int, ...]:
        return SUBSETS[self.subset]

    def to_json(self) -> str:
        doc = {
            "schema": 1,
            "subset": self.subset,
            "features": [FEATURE_NAMES[i] for i in self.features],
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "priors": self.priors.tolist(),
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ClassifierModel":
        doc = json.loads(text)
        return cls(doc["subset"], np.array(doc["means"]), np.array(doc["variances"]), np.array(doc["priors"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        return cls.from_json(Path(path).read_text())


def train(samples: Sequence[tuple[Features, np.ndarray]], subset: str = "rgbd") -> ClassifierModel:
    """Fit per-class means, variances (floored) and priors over valid-depth pixels."""
    if subset not in SUBSETS:
        raise ValidationError(f"subset must be one of {sorted(SUBSETS)}")
    if not samples:
        raise ValidationError("no training data")
    cols = list(SUBSETS[subset])
    X, y = [], []
    for feats, labels in samples:
        labels = as_labelmap(labels, feats.shape)
        X.append(feats.values[feats.valid][:, cols])
        y.append(labels[feats.valid])
    X = np.concatenate(X)
    y = np.concatenate(y).astype(np.int64)
    counts = np.bincount(y, minlength=N_CLASSES)
    if np.any(counts == 0):
        missing = [c for c in range(N_CLASSES) if counts[c] == 0]
        raise ValidationError(f"training data lacks classes {missing}")
    means = np.stack([X[y == c].mean(axis=0) for c in range(N_CLASSES)])
    var = np.stack([X[y == c].var(axis=0) for c in range(N_CLASSES)])
    var = np.maximum(var, VARIANCE_FLOOR)
    return ClassifierModel(subset, means, var, counts / counts.sum())


def log_posterior(model: ClassifierModel, feats: Features) -> np.ndarray:
    """Unnormalized log posterior per class, shape ``(H, W, 3)``.

    Depth features are left out at pixels without valid depth.
    """
    cols = model.features
    X = feats.values[..., list(cols)]
    use = np.ones(X.shape, dtype=bool)
    for k, c in enumerate(cols):
        if c in DEPTH_FEATURES:
            use[..., k] = feats.valid
    out = np.empty(feats.shape + (N_CLASSES,))
    for c in range(N_CLASSES):
        mu, var = model.means[c], model.variances[c]
        term = np.log(2 * np.pi * var) + (X - mu) ** 2 / var
        out[..., c] = -0.5 * np.sum(np.where(use, term, 0.0), axis=-1) + np.log(model.priors[c])
    return out


def predict_features(model: ClassifierModel, feats: Features) -> np.ndarray:
    # argmax returns the first maximum, i.e. the smallest class id on ties
    return np.argmax(log_posterior(model, feats), axis=-1).astype(np.uint8)


def predict(model: ClassifierModel, rgb, depth: DepthMap) -> np.ndarray:
    return predict_features(model, extract_features(rgb, depth))


def evaluate(model: ClassifierModel, samples: Sequence[tuple[Features, np.ndarray]]) -> IoUReport:
    """IoU pooled over all pixels of all test samples."""
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for feats, labels in samples:
        cm += confusion_matrix(predict_features(model, feats), as_labelmap(labels, feats.shape))
    return iou_from_confusion(cm)


def observe_scene(scene, seed: int = 0, rgb_noise: float = 0.02, depth_noise: float = 0.003,
                  wavelengths=(638.0, 520.0, 450.0)):
    """Noisy sRGB image and depth map of a scene, for training and testing.

    Linear band reflectance gets additive Gaussian noise before sRGB
    encoding; depth gets noise proportional to depth squared, as
    triangulation error does.
    """
    from .scene import linear_to_srgb8, reflectance_image

    rng = np.random.default_rng(seed)
    lin = np.stack([reflectance_image(scene, w) for w in wavelengths], axis=-1)
    lin = np.clip(lin + rng.normal(0.0, rgb_noise, lin.shape), 0.0, 1.0)
    rgb = np.floor(linear_to_srgb8(lin) + 0.5).astype(np.uint8)
    z = scene.depth.depth
    noisy = z + rng.normal(0.0, 1.0, z.shape) * depth_noise * z ** 2
    valid = scene.depth.valid & (noisy > 0)
    return rgb, DepthMap(np.where(valid, noisy, 0.0), valid)
