"""Figure-style images and matplotlib figures for run reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .core.types import LABEL_BRANCHES, LABEL_LEAVES, DepthMap, ValidationError, as_labelmap  # noqa: E402

OVERLAY_COLORS = {LABEL_BRANCHES: (255, 0, 0), LABEL_LEAVES: (0, 0, 255)}
# PNG metadata without the matplotlib version keeps reruns byte-identical across installs
SAVE_KW = {"dpi": 100, "metadata": {"Software": None}}


def render_depth_colormap(depth: DepthMap, cmap: str = "turbo") -> np.ndarray:
    """8-bit RGB rendering of valid depth over its own range; invalid pixels black."""
    out = np.zeros(depth.shape + (3,), dtype=np.uint8)
    valid = depth.valid
    if not valid.any():
        return out
    z = depth.depth[valid]
    lo, hi = float(z.min()), float(z.max())
    s = (z - lo) / (hi - lo) if hi > lo else np.full(z.shape, 0.5)
    rgba = matplotlib.colormaps[cmap](s)
    out[valid] = np.floor(rgba[:, :3] * 255.0 + 0.5).astype(np.uint8)
    return out


def render_overlay(rgb, labels) -> np.ndarray:
    """Branches tinted red, leaves blue, each at 50 % alpha; background untouched."""
    img = np.asarray(rgb)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError("rgb must be an (H, W, 3) image")
    lab = as_labelmap(labels, img.shape[:2])
    out = img.astype(np.uint16).copy()
    for cls, color in OVERLAY_COLORS.items():
        m = lab == cls
        out[m] = (out[m] + np.array(color, dtype=np.uint16) + 1) // 2
    return out.astype(np.uint8)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **SAVE_KW)
    plt.close(fig)
    return path


def figure_depth(depth: DepthMap, truth: DepthMap, path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    for ax, d, title in zip(axes, (truth, depth), ("ground truth", "reconstructed")):
        ax.imshow(render_depth_colormap(d))
        ax.set_title(title)
        ax.axis("off")
    fig.tight_layout()
    return _save(fig, path)


def figure_chart(truth, stages: dict, path) -> Path:
    names = list(stages)
    fig, axes = plt.subplots(1, len(names) + 1, figsize=(2.6 * (len(names) + 1), 2.4))
    axes[0].imshow(truth)
    axes[0].set_title("truth")
    for ax, name in zip(axes[1:], names):
        ax.imshow(stages[name])
        ax.set_title(name)
    for ax in axes:
        ax.axis("off")
    fig.tight_layout()
    return _save(fig, path)


def figure_signatures(measured: dict, truth: dict, path) -> Path:
    """Measured (markers) and true (lines) reflectance per material."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, name in enumerate(measured):
        color = f"C{i % 10}"
        wl, vals = zip(*measured[name])
        ax.plot(wl, vals, "o", color=color, label=name)
        twl, tvals = zip(*truth[name])
        ax.plot(twl, tvals, "-", color=color, lw=1)
    ax.set_xlabel("wavelength (nm)")
    ax.set_ylabel("reflectance")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    return _save(fig, path)


def figure_segmentation(rgb, pred, truth, ious: dict, path) -> Path:
    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    axes[0].imshow(render_overlay(rgb, truth))
    axes[0].set_title("labels")
    axes[1].imshow(render_overlay(rgb, pred))
    axes[1].set_title("prediction (rgbd)")
    for ax in axes[:2]:
        ax.axis("off")
    names = list(ious)
    axes[2].bar(names, [ious[n] for n in names], color=["0.6", "C0", "C3"][: len(names)])
    axes[2].set_ylim(0, 1)
    axes[2].set_ylabel("mean IoU")
    fig.tight_layout()
    return _save(fig, path)
