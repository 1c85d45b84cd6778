"""Synthetic ground truth: heightfield geometry, materials and the camera/projector rig.

Geometry is a camera-aligned heightfield: one metric depth per camera pixel.
Each pixel also carries a material index; materials own a piecewise-linear
spectral reflectance curve.  Surfaces are Lambertian under a uniform ambient
level (per band if a mapping is given).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import io as fio
from .core.types import (
    LABEL_BACKGROUND,
    LABEL_BRANCHES,
    LABEL_LEAVES,
    Box,
    DepthMap,
    ValidationError,
    as_labelmap,
)

EXTRAPOLATION_NM = 50.0

RGB_WAVELENGTHS = (638.0, 520.0, 450.0)
SPECTRAL_WAVELENGTHS = (650.0, 690.0, 730.0, 770.0, 810.0, 850.0)


@dataclass(frozen=True)
class SpectralReflectance:
    """Reflectance samples at strictly increasing wavelengths (nm)."""

    wavelengths: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        wl = tuple(float(w) for w in self.wavelengths)
        vals = tuple(float(v) for v in self.values)
        if len(wl) < 2 or len(wl) != len(vals):
            raise ValidationError("a reflectance curve needs >= 2 (wavelength, value) samples")
        if any(b <= a for a, b in zip(wl, wl[1:])):
            raise ValidationError("wavelengths must be strictly increasing")
        if any(not (0.0 <= v <= 1.0) for v in vals):
            raise ValidationError("reflectance values must lie in [0, 1]")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value: float, lo: float = 400.0, hi: float = 900.0) -> "SpectralReflectance":
        return cls((lo, hi), (value, value))

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]]) -> "SpectralReflectance":
        wl, vals = zip(*pairs)
        return cls(wl, vals)

    def scaled(self, s: float) -> "SpectralReflectance":
        return SpectralReflectance(self.wavelengths, tuple(min(1.0, v * s) for v in self.values))

    def __call__(self, wavelength):
        return sample_reflectance(self, wavelength)


@dataclass(frozen=True)
class Material:
    name: str
    reflectance: SpectralReflectance


def sample_reflectance(material, wavelength):
    """Reflectance at ``wavelength`` (nm).

    Linear interpolation between knots and constant extrapolation up to 50 nm
    beyond either end; further out raises ``ValueError``.
    """
    curve = material.reflectance if isinstance(material, Material) else material
    wl = np.asarray(wavelength, dtype=np.float64)
    lo, hi = curve.wavelengths[0], curve.wavelengths[-1]
    if np.any(wl < lo - EXTRAPOLATION_NM) or np.any(wl > hi + EXTRAPOLATION_NM):
        raise ValueError(
            f"wavelength {wavelength} nm outside [{lo - EXTRAPOLATION_NM}, {hi + EXTRAPOLATION_NM}] nm"
        )
    out = np.interp(wl, curve.wavelengths, curve.values)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PinholeModel:
    f: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not self.f > 0:
            raise ValidationError("focal length must be > 0")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("resolution must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValidationError("principal point must lie inside the image")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.width, self.height

    def project(self, points) -> np.ndarray:
        """Pixel coordinates ``(u, v)`` of camera-frame points."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        u = self.f * pts[:, 0] / pts[:, 2] + self.cx
        v = self.f * pts[:, 1] / pts[:, 2] + self.cy
        return np.column_stack([u, v])


@dataclass(frozen=True)
class RigGeometry:
    """Rectified camera/projector pair; the projector sits ``baseline`` m along +x."""

    camera: PinholeModel
    projector: PinholeModel
    baseline: float
    rectified: bool = True

    def __post_init__(self):
        if not self.baseline > 0:
            raise ValidationError("rig.baseline must be > 0")


def default_camera() -> PinholeModel:
    return PinholeModel(f=500.0, cx=320.0, cy=240.0, width=640, height=480)


def default_projector() -> PinholeModel:
    return PinholeModel(f=1000.0, cx=960.0, cy=360.0, width=1920, height=720)


def default_rig() -> RigGeometry:
    return RigGeometry(default_camera(), default_projector(), baseline=0.1)


def scaled_rig(scale: float, baseline: float = 0.1) -> RigGeometry:
    """The default rig with both resolutions and focal lengths scaled by ``scale``."""
    cam, proj = default_camera(), default_projector()

    def sc(p: PinholeModel) -> PinholeModel:
        return PinholeModel(p.f * scale, p.cx * scale, p.cy * scale,
                            int(round(p.width * scale)), int(round(p.height * scale)))

    return RigGeometry(sc(cam), sc(proj), baseline)


@dataclass
class SceneModel:
    """Ground-truth scene seen from the camera.

    ``regions`` names pixel boxes of interest (chart blocks, gray patches,
    reference panel, ...); ``meta`` holds builder-specific truth values such
    as chart sRGB targets.
    """

    depth: DepthMap
    material_map: np.ndarray
    materials: list[Material]
    ambient: float | Mapping[float, float] = 1.0
    labels: np.ndarray | None = None
    regions: dict[str, object] = field(default_factory=dict)
    meta: dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        self.material_map = np.asarray(self.material_map, dtype=np.int32)
        if self.material_map.shape != self.depth.shape:
            raise ValidationError(
                f"material map {self.material_map.shape} and depth {self.depth.shape} differ"
            )
        if not self.materials:
            raise ValidationError("scene needs at least one material")
        if self.material_map.min() < 0 or self.material_map.max() >= len(self.materials):
            raise ValidationError("material index out of range")
        names = [m.name for m in self.materials]
        if len(set(names)) != len(names):
            raise ValidationError("material names must be unique")
        if self.labels is not None:
            self.labels = as_labelmap(self.labels, self.shape)
        amb = self.ambient.values() if isinstance(self.ambient, Mapping) else [self.ambient]
        if any(a < 0 for a in amb):
            raise ValidationError("ambient intensity must be >= 0")

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @property
    def width(self) -> int:
        return self.shape[1]

    @property
    def height(self) -> int:
        return self.shape[0]

    def ambient_at(self, wavelength: float) -> float:
        if isinstance(self.ambient, Mapping):
            keys = np.array(sorted(float(k) for k in self.ambient))
            vals = np.array([self.ambient[k] for k in sorted(self.ambient, key=float)], dtype=float)
            return float(np.interp(wavelength, keys, vals))
        return float(self.ambient)

    def material_index(self, name: str) -> int:
        for i, m in enumerate(self.materials):
            if m.name == name:
                return i
        raise KeyError(name)

    def with_reflectance_scale(self, s: float) -> "SceneModel":
        """Copy of the scene with every reflectance multiplied by ``s``."""
        return SceneModel(
            self.depth, self.material_map.copy(),
            [Material(m.name, m.reflectance.scaled(s)) for m in self.materials],
            self.ambient, self.labels, dict(self.regions), dict(self.meta),
        )


def reflectance_image(scene: SceneModel, wavelength: float) -> np.ndarray:
    """Per-pixel reflectance at one wavelength, looked up through the material map."""
    table = np.array([sample_reflectance(m, wavelength) for m in scene.materials])
    return table[scene.material_map]


def depth_to_pointcloud(depth: DepthMap, pinhole: PinholeModel) -> np.ndarray:
    """Back-project every valid depth pixel to a camera-frame 3-D point (meters)."""
    ys, xs = np.nonzero(depth.valid)
    z = depth.depth[ys, xs]
    x = (xs - pinhole.cx) * z / pinhole.f
    y = (ys - pinhole.cy) * z / pinhole.f
    return np.column_stack([x, y, z])


# ------------------------------------------------------------------ builders


def _solid_scene(depth: np.ndarray, material_map, materials, **kw) -> SceneModel:
    return SceneModel(DepthMap(depth, np.ones(depth.shape, dtype=bool)), material_map, materials, **kw)


def make_plane_scene(depth: float = 1.0, width: int = 640, height: int = 480,
                     reflectance: float = 0.5, ambient: float = 1.0) -> SceneModel:
    """Fronto-parallel plane of uniform gray reflectance."""
    z = np.full((height, width), float(depth))
    mat = [Material("plane", SpectralReflectance.constant(reflectance))]
    return _solid_scene(z, np.zeros((height, width), dtype=np.int32), mat, ambient=ambient)


def make_split_scene(left: float, right: float, width: int = 64, height: int = 48,
                     depth: float = 1.0, ambient: float = 1.0) -> SceneModel:
    """Plane whose left and right halves carry different gray reflectances."""
    mm = np.zeros((height, width), dtype=np.int32)
    mm[:, width // 2:] = 1
    mats = [Material("left", SpectralReflectance.constant(left)),
            Material("right", SpectralReflectance.constant(right))]
    scene = _solid_scene(np.full((height, width), float(depth)), mm, mats, ambient=ambient)
    scene.regions["left"] = Box(0, 0, width // 2, height)
    scene.regions["right"] = Box(width // 2, 0, width, height)
    return scene


def make_step_scene(near: float = 0.8, far: float = 1.0, width: int = 640, height: int = 480,
                    edge: int | None = None, near_side: str = "left",
                    reflectance: float = 0.5, ambient: float = 1.0) -> SceneModel:
    """Two fronto-parallel planes meeting at a vertical edge at column ``edge``.

    ``meta["edge"]`` records the first column of the right-hand plane.
    """
    edge = width // 2 if edge is None else int(edge)
    z = np.full((height, width), float(far))
    if near_side == "left":
        z[:, :edge] = near
    elif near_side == "right":
        z[:, edge:] = near
    else:
        raise ValueError("near_side must be 'left' or 'right'")
    mat = [Material("plane", SpectralReflectance.constant(reflectance))]
    scene = _solid_scene(z, np.zeros((height, width), dtype=np.int32), mat, ambient=ambient)
    scene.meta.update(edge=edge, near=near, far=far, near_side=near_side)
    return scene


def make_wedge_scene(values: Sequence[float], width: int | None = None, height: int = 8,
                     patch: int = 8, depth: float = 1.0, ambient: float = 1.0) -> SceneModel:
    """Row of constant-gray patches; ``regions["wedge"]`` lists one box per value."""
    n = len(values)
    width = n * patch if width is None else width
    bounds = np.linspace(0, width, n + 1).round().astype(int)
    mm = np.zeros((height, width), dtype=np.int32)
    boxes = []
    for i in range(n):
        mm[:, bounds[i]:bounds[i + 1]] = i
        boxes.append(Box(int(bounds[i]), 0, int(bounds[i + 1]), height))
    mats = [Material(f"gray_{i:02d}", SpectralReflectance.constant(v)) for i, v in enumerate(values)]
    scene = _solid_scene(np.full((height, width), float(depth)), mm, mats, ambient=ambient)
    scene.regions["wedge"] = boxes
    scene.meta["values"] = [float(v) for v in values]
    return scene


# sRGB (8-bit) targets of the 16 chromatic chart blocks and the 6 gray patches
CHART_BLOCKS_SRGB = (
    (115, 82, 68), (194, 150, 130), (98, 122, 157), (87, 108, 67),
    (133, 128, 177), (103, 189, 170), (214, 126, 44), (80, 91, 166),
    (193, 90, 99), (94, 60, 108), (157, 188, 64), (224, 163, 46),
    (56, 61, 150), (70, 148, 73), (175, 54, 60), (231, 199, 31),
)
CHART_GRAYS_SRGB = (243, 200, 160, 122, 85, 52)
CHART_FRAME_REFLECTANCE = 0.03


def srgb8_to_linear(values) -> np.ndarray:
    c = np.asarray(values, dtype=np.float64) / 255.0
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb8(values) -> np.ndarray:
    """Linear [0, 1] values to unrounded 8-bit sRGB code values."""
    c = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    s = np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1 / 2.4) - 0.055)
    return s * 255.0


def _rgb_material(name: str, linear_rgb) -> Material:
    r, g, b = (float(v) for v in linear_rgb)
    return Material(name, SpectralReflectance(
        (RGB_WAVELENGTHS[2], RGB_WAVELENGTHS[1], RGB_WAVELENGTHS[0]), (b, g, r)))


def make_chart_scene(width: int = 640, height: int = 480, depth: float = 1.0,
                     ambient: float = 1.0) -> SceneModel:
    """Color chart on a plane: 4x4 chromatic blocks over a 6-patch gray strip.

    Block reflectances at the red/green/blue band centers are the linearized
    sRGB targets, so a perfect linear reconstruction re-encodes to the
    targets.  Regions: ``blocks`` (16 boxes), ``grays`` (6 boxes) and
    ``panel`` (the brightest gray).  Targets are in ``meta``.
    """
    mm = np.zeros((height, width), dtype=np.int32)
    mats = [Material("frame", SpectralReflectance.constant(CHART_FRAME_REFLECTANCE))]
    m = max(1, width // 40)
    top, split, bottom = m, int(round(0.72 * height)), height - m
    xs = np.linspace(m, width - m, 5).round().astype(int)
    ys = np.linspace(top, split, 5).round().astype(int)
    gap = max(1, m // 2)
    blocks = []
    for i, rgb in enumerate(CHART_BLOCKS_SRGB):
        r, c = divmod(i, 4)
        box = Box(int(xs[c]) + gap, int(ys[r]) + gap, int(xs[c + 1]) - gap, int(ys[r + 1]) - gap)
        mats.append(_rgb_material(f"block_{i:02d}", srgb8_to_linear(rgb)))
        mm[box.slices] = len(mats) - 1
        blocks.append(box)
    gx = np.linspace(m, width - m, len(CHART_GRAYS_SRGB) + 1).round().astype(int)
    gy0 = int(round(0.76 * height))
    grays = []
    for i, g in enumerate(CHART_GRAYS_SRGB):
        box = Box(int(gx[i]) + gap, gy0, int(gx[i + 1]) - gap, bottom)
        mats.append(Material(f"gray_{i}", SpectralReflectance.constant(float(srgb8_to_linear(g)))))
        mm[box.slices] = len(mats) - 1
        grays.append(box)
    scene = _solid_scene(np.full((height, width), float(depth)), mm, mats, ambient=ambient)
    scene.regions.update(blocks=blocks, grays=grays, panel=grays[0])
    scene.meta.update(
        block_srgb=[list(c) for c in CHART_BLOCKS_SRGB],
        gray_srgb=list(CHART_GRAYS_SRGB),
        panel_reflectance=float(srgb8_to_linear(CHART_GRAYS_SRGB[0])),
    )
    return scene


# spectral signatures of the bench materials (nm, reflectance)
MATERIAL_CURVES = {
    "reference_panel": ((400, 0.99), (900, 0.99)),
    "branch": ((400, 0.07), (450, 0.08), (520, 0.12), (600, 0.18), (650, 0.22),
               (700, 0.27), (750, 0.32), (800, 0.36), (850, 0.39), (900, 0.41)),
    "leaf": ((400, 0.04), (450, 0.05), (520, 0.13), (550, 0.14), (600, 0.09), (650, 0.06),
             (680, 0.05), (700, 0.14), (730, 0.38), (760, 0.48), (800, 0.51), (850, 0.52), (900, 0.52)),
    "foam": ((400, 0.78), (600, 0.84), (900, 0.88)),
    "plaster": ((400, 0.86), (600, 0.91), (900, 0.93)),
    "wood": ((400, 0.25), (500, 0.35), (650, 0.50), (800, 0.58), (900, 0.60)),
    "cork": ((400, 0.12), (500, 0.20), (650, 0.34), (750, 0.42), (900, 0.49)),
    "plastic": ((400, 0.45), (450, 0.50), (520, 0.30), (600, 0.18), (650, 0.15),
                (700, 0.30), (750, 0.55), (800, 0.62), (900, 0.64)),
}


def make_material_board_scene(width: int = 640, height: int = 480, depth: float = 1.0,
                              ambient: float = 1.0) -> SceneModel:
    """Eight material samples (2 x 4 grid) on a dark backdrop; ``regions`` per material."""
    mm = np.zeros((height, width), dtype=np.int32)
    mats = [Material("backdrop", SpectralReflectance.constant(0.03))]
    xs = np.linspace(0, width, 5).round().astype(int)
    ys = np.linspace(0, height, 3).round().astype(int)
    pad_x, pad_y = max(1, width // 32), max(1, height // 24)
    for i, (name, pairs) in enumerate(MATERIAL_CURVES.items()):
        r, c = divmod(i, 4)
        box = Box(int(xs[c]) + pad_x, int(ys[r]) + pad_y, int(xs[c + 1]) - pad_x, int(ys[r + 1]) - pad_y)
        mats.append(Material(name, SpectralReflectance.from_pairs(pairs)))
        mm[box.slices] = len(mats) - 1
    scene = _solid_scene(np.full((height, width), float(depth)), mm, mats, ambient=ambient)
    for name in MATERIAL_CURVES:
        idx = scene.material_index(name)
        ys_, xs_ = np.nonzero(mm == idx)
        scene.regions[name] = Box(int(xs_.min()), int(ys_.min()), int(xs_.max()) + 1, int(ys_.max()) + 1)
    scene.regions["panel"] = scene.regions["reference_panel"]
    return scene


def _jittered(pairs, rng, spread: float) -> SpectralReflectance:
    scale = float(np.exp(rng.normal(0.0, spread)))
    wl, vals = zip(*pairs)
    return SpectralReflectance(wl, tuple(float(np.clip(v * scale, 0.0, 1.0)) for v in vals))


_FOREST_CURVES = {
    "leaf_green": ((400, 0.04), (450, 0.05), (520, 0.20), (560, 0.18), (638, 0.07),
                   (700, 0.15), (750, 0.45), (900, 0.50)),
    "leaf_brown": ((400, 0.06), (450, 0.09), (520, 0.17), (638, 0.30), (700, 0.35),
                   (750, 0.40), (900, 0.42)),
    "branch": ((400, 0.07), (450, 0.09), (520, 0.16), (638, 0.27), (700, 0.30),
               (750, 0.33), (900, 0.38)),
    "sky": ((400, 0.60), (450, 0.62), (520, 0.58), (638, 0.52), (900, 0.50)),
    "soil": ((400, 0.05), (450, 0.06), (520, 0.09), (638, 0.13), (900, 0.20)),
}


def make_forest_scene(seed: int = 0, width: int = 160, height: int = 120,
                      n_leaves: int = 18, n_branches: int = 4, brown_fraction: float = 0.38,
                      ambient: float = 1.0) -> SceneModel:
    """Randomized leaves, branches and background with a ground-truth label map.

    Leaves are smooth elliptic blobs (mostly green, some brown) at 0.8-2.6 m;
    branches are thin cylinders at 0.7-2.0 m with brown reflectance close to
    the brown leaves; the background mixes bright sky and dark soil on a
    smooth surface at 1.6-3.2 m, so depth ranges overlap.  Brown leaves and
    branches are told apart mainly by geometry, which is what the depth
    channel contributes.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)

    mats: list[Material] = []

    def add(name: str, curve: SpectralReflectance) -> int:
        mats.append(Material(name, curve))
        return len(mats) - 1

    # background: far tilted surface, sky above a wavy horizon, soil below
    z = 1.6 + 1.6 * (1.0 - yy / height) + 0.15 * np.sin(xx / width * 2 * np.pi * rng.uniform(0.5, 1.5))
    sky = add("sky", _jittered(_FOREST_CURVES["sky"], rng, 0.05))
    soil = add("soil", _jittered(_FOREST_CURVES["soil"], rng, 0.05))
    horizon = height * rng.uniform(0.35, 0.6) + height * 0.08 * np.sin(xx / width * 2 * np.pi * rng.uniform(1, 3))
    mm = np.where(yy < horizon, sky, soil).astype(np.int32)
    labels = np.full((height, width), LABEL_BACKGROUND, dtype=np.uint8)

    objects = []
    for i in range(n_leaves):
        objects.append(("leaf", rng.uniform(0.8, 2.6), i))
    for i in range(n_branches):
        objects.append(("branch", rng.uniform(0.7, 2.0), i))
    # painter's order: far objects first
    objects.sort(key=lambda o: -o[1])

    for kind, d0, i in objects:
        if kind == "leaf":
            brown = rng.uniform() < brown_fraction
            key = "leaf_brown" if brown else "leaf_green"
            mid = add(f"{key}_{i:02d}", _jittered(_FOREST_CURVES[key], rng, 0.12))
            cx, cy = rng.uniform(0, width), rng.uniform(0, height)
            a = rng.uniform(0.05, 0.12) * width
            b = a * rng.uniform(0.35, 0.7)
            th = rng.uniform(0, np.pi)
            u = (xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)
            v = -(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)
            inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
            gx, gy = rng.normal(0, 0.002, size=2)
            surf = d0 + gx * (xx - cx) + gy * (yy - cy)
            lab = LABEL_LEAVES
        else:
            mid = add(f"branch_{i:02d}", _jittered(_FOREST_CURVES["branch"], rng, 0.08))
            x0, x1 = rng.uniform(-0.1, 1.1, size=2) * width
            y0, y1 = 0.0, float(height)
            if rng.uniform() < 0.5:
                x0, y0, x1, y1 = 0.0, rng.uniform(0, height), float(width), rng.uniform(0, height)
            dx, dy = x1 - x0, y1 - y0
            length = np.hypot(dx, dy)
            dist = ((xx - x0) * dy - (yy - y0) * dx) / length
            radius_px = rng.uniform(1.5, 3.0)
            inside = np.abs(dist) <= radius_px
            radius_m = radius_px * d0 / (width * 0.8)
            surf = d0 - radius_m * np.sqrt(np.clip(1.0 - (dist / radius_px) ** 2, 0.0, 1.0))
            lab = LABEL_BRANCHES
        mm[inside] = mid
        z[inside] = surf[inside]
        labels[inside] = lab

    scene = _solid_scene(z, mm, mats, ambient=ambient, labels=labels)
    scene.meta["seed"] = int(seed)
    return scene


BUILTIN_SCENES = {
    "plane": make_plane_scene,
    "step": make_step_scene,
    "chart": make_chart_scene,
    "forest": make_forest_scene,
    "materials": make_material_board_scene,
    "wedge": make_wedge_scene,
    "split": make_split_scene,
}


# --------------------------------------------------------------- scene files


def _region_to_json(r):
    if isinstance(r, Box):
        return r.to_list()
    return [b.to_list() for b in r]


def _region_from_json(r):
    if r and isinstance(r[0], (list, tuple)):
        return [Box(*b) for b in r]
    return Box(*r)


def save_scene(scene: SceneModel, path) -> None:
    """Write ``<name>.json`` plus sibling depth PFM, mask and material/label PGMs."""
    path = Path(path)
    stem = path.with_suffix("")
    if len(scene.materials) > 256:
        raise ValidationError("scene files support at most 256 materials")
    fio.write_image(f"{stem}_depth.pfm", scene.depth.depth.astype(np.float32))
    fio.write_mask(f"{stem}_valid.pgm", scene.depth.valid)
    fio.write_image(f"{stem}_materials.pgm", scene.material_map.astype(np.uint8))
    doc = {
        "schema": 1,
        "depth": f"{stem.name}_depth.pfm",
        "valid": f"{stem.name}_valid.pgm",
        "material_map": f"{stem.name}_materials.pgm",
        "materials": [
            {"name": m.name, "wavelengths": list(m.reflectance.wavelengths),
             "reflectance": list(m.reflectance.values)}
            for m in scene.materials
        ],
        "ambient": ({str(k): v for k, v in scene.ambient.items()}
                    if isinstance(scene.ambient, Mapping) else scene.ambient),
        "regions": {k: _region_to_json(v) for k, v in scene.regions.items()},
        "meta": scene.meta,
    }
    if scene.labels is not None:
        fio.write_labels(f"{stem}_labels.pgm", scene.labels)
        doc["labels"] = f"{stem.name}_labels.pgm"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_scene(path) -> SceneModel:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("schema") != 1:
        raise ValidationError(f"{path}: unsupported scene schema {doc.get('schema')!r}")
    base = path.parent
    depth = fio.read_image(base / doc["depth"]).astype(np.float64)
    if "valid" in doc:
        valid = fio.read_mask(base / doc["valid"])
    else:
        valid = np.isfinite(depth) & (depth > 0)
    mm = fio.read_image(base / doc["material_map"]).astype(np.int32)
    materials = [
        Material(m["name"], SpectralReflectance(m["wavelengths"], m["reflectance"]))
        for m in doc["materials"]
    ]
    amb = doc.get("ambient", 1.0)
    if isinstance(amb, dict):
        amb = {float(k): float(v) for k, v in amb.items()}
    labels = fio.read_labels(base / doc["labels"]) if "labels" in doc else None
    regions = {k: _region_from_json(v) for k, v in doc.get("regions", {}).items()}
    return SceneModel(DepthMap(np.where(valid, depth, 0.0), valid), mm, materials,
                      ambient=amb, labels=labels, regions=regions, meta=doc.get("meta", {}))
