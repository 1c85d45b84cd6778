"""Command-line pipeline runner.

    event-spectra run --config run.json [--out DIR] [--seed N]
    event-spectra validate --config run.json
    event-spectra formats

Exit codes: 0 ok, 2 configuration error, 3 pipeline error.
"""

from __future__ import annotations

import argparse
import inspect
import json
import os
import shutil
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import io as fio
from .core.types import LABEL_NAMES, DepthMap, ValidationError
from .depth import quantization_bound, reconstruct_depth, write_depth
from .metrics import chamfer, icp_align, rmse_pointcloud
from .projector import ProjectorConfig, ScanSchedule, frame_rate_for_dwell, projector_correspondence
from .render import (
    figure_chart,
    figure_depth,
    figure_segmentation,
    figure_signatures,
    render_depth_colormap,
    render_overlay,
)
from .scene import (
    BUILTIN_SCENES,
    RGB_WAVELENGTHS,
    SPECTRAL_WAVELENGTHS,
    PinholeModel,
    RigGeometry,
    SceneModel,
    default_rig,
    depth_to_pointcloud,
    load_scene,
    sample_reflectance,
    scaled_rig,
)
from .segment import SUBSETS, evaluate, extract_features, observe_scene, predict_features, train
from .sensor import SensorConfig, simulate
from .spectral.color import chart_report, correct_chart
from .spectral.cube import normalize_to_reference, spectral_signature
from .spectral.pipeline import SweepSettings, chart_capture, measure_cube

__all__ = ["main", "load_config", "parse_config", "run", "render_depth_colormap", "render_overlay"]

SCHEMA_VERSION = 1
PIPELINES = ("depth", "rgb", "spectral", "segment", "all")
DEFAULT_SCENES = {"depth": "plane", "rgb": "chart", "spectral": "materials", "segment": "forest"}
DEFAULT_DWELL = 2e-6
RUN_MARKER = "run.json"

EXIT_OK, EXIT_CONFIG, EXIT_PIPELINE = 0, 2, 3


class ConfigError(ValueError):
    """Invalid run configuration; the message starts with the field path."""


# ----------------------------------------------------------------- config


@dataclass(frozen=True)
class SceneSpec:
    builtin: str | None = None
    params: dict = field(default_factory=dict)
    file: Path | None = None


@dataclass(frozen=True)
class DepthSettings:
    frames: int = 1
    median_radius: int = 1
    row_tolerance: float = 1.0
    wavelength: float = RGB_WAVELENGTHS[0]
    icp_trim: float = 0.0
    sensor: SensorConfig | None = None   # overrides the run's sensor for this pipeline


@dataclass(frozen=True)
class SegmentSettings:
    train: int = 21
    test: int = 10
    rgb_noise: float = 0.02
    depth_noise: float = 0.003


@dataclass(frozen=True)
class RunConfig:
    pipeline: str
    scene: SceneSpec | None
    rig: RigGeometry
    projector: dict
    sensor: SensorConfig
    sweep: SweepSettings
    depth: DepthSettings
    spectral_wavelengths: tuple[float, ...]
    segment: SegmentSettings
    output: Path | None
    seed: int


_MISSING = object()


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _section(doc: dict, name: str, allowed) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected an object")
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"{name}.{key}: unknown field")
    return sec


def _num(sec: dict, key: str, path: str, default=_MISSING, integer: bool = False, positive: bool = False,
         nonneg: bool = False):
    if key not in sec:
        if default is _MISSING:
            raise ConfigError(f"{path}.{key}: required field missing")
        return default
    v = sec[key]
    if not _is_number(v) or (integer and not float(v).is_integer()):
        raise ConfigError(f"{path}.{key}: expected {'an integer' if integer else 'a number'}, got {v!r}")
    if not np.isfinite(v):
        raise ConfigError(f"{path}.{key}: must be finite")
    if positive and not v > 0:
        raise ConfigError(f"{path}.{key}: must be > 0, got {v!r}")
    if nonneg and v < 0:
        raise ConfigError(f"{path}.{key}: must be >= 0, got {v!r}")
    return int(v) if integer else float(v)


def _num_list(sec: dict, key: str, path: str, default):
    if key not in sec:
        return tuple(default)
    v = sec[key]
    if not isinstance(v, list) or not v or not all(_is_number(x) and x > 0 for x in v):
        raise ConfigError(f"{path}.{key}: expected a non-empty list of positive numbers")
    return tuple(float(x) for x in v)


def _wrap(path: str, fn, *args, **kw):
    """Run a constructor, turning its validation errors into config errors under ``path``."""
    try:
        return fn(*args, **kw)
    except (ValidationError, TypeError, ValueError) as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(path) else f"{path}: {msg}") from None


def _parse_pinhole(sec, path: str) -> PinholeModel:
    if not isinstance(sec, dict):
        raise ConfigError(f"{path}: expected an object")
    for key in sec:
        if key not in ("f", "cx", "cy", "width", "height"):
            raise ConfigError(f"{path}.{key}: unknown field")
    return _wrap(path, PinholeModel, _num(sec, "f", path, positive=True), _num(sec, "cx", path),
                 _num(sec, "cy", path), _num(sec, "width", path, integer=True, positive=True),
                 _num(sec, "height", path, integer=True, positive=True))


def _parse_rig(doc: dict) -> RigGeometry:
    sec = _section(doc, "rig", ("scale", "baseline", "camera", "projector"))
    baseline = _num(sec, "baseline", "rig", 0.1)
    if not baseline > 0:
        raise ConfigError(f"rig.baseline: must be > 0, got {sec['baseline']!r}")
    if "camera" in sec or "projector" in sec:
        if "scale" in sec:
            raise ConfigError("rig.scale: cannot be combined with explicit camera/projector")
        base = default_rig()
        cam = _parse_pinhole(sec["camera"], "rig.camera") if "camera" in sec else base.camera
        proj = _parse_pinhole(sec["projector"], "rig.projector") if "projector" in sec else base.projector
        return _wrap("rig", RigGeometry, cam, proj, baseline)
    scale = _num(sec, "scale", "rig", 1.0, positive=True)
    return _wrap("rig", scaled_rig, scale, baseline)


def _parse_scene(doc: dict, base_dir: Path) -> SceneSpec | None:
    if "scene" not in doc:
        return None
    sec = _section(doc, "scene", ("builtin", "params", "file"))
    if ("builtin" in sec) == ("file" in sec):
        raise ConfigError("scene: give exactly one of 'builtin' or 'file'")
    if "file" in sec:
        if not isinstance(sec["file"], str):
            raise ConfigError("scene.file: expected a path string")
        if "params" in sec:
            raise ConfigError("scene.params: only allowed with 'builtin'")
        p = Path(sec["file"])
        p = p if p.is_absolute() else base_dir / p
        if not p.is_file():
            raise ConfigError(f"scene.file: no such file {str(p)!r}")
        return SceneSpec(file=p)
    name = sec["builtin"]
    if name not in BUILTIN_SCENES:
        raise ConfigError(f"scene.builtin: unknown scene {name!r} (have {sorted(BUILTIN_SCENES)})")
    params = sec.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("scene.params: expected an object")
    accepted = inspect.signature(BUILTIN_SCENES[name]).parameters
    for key in params:
        if key not in accepted:
            raise ConfigError(f"scene.params.{key}: not a parameter of scene {name!r}")
    return SceneSpec(builtin=name, params=dict(params))


_SENSOR_FIELDS = ("c_on", "c_off", "pr_bias", "diff_on", "f_dark", "kappa", "refractory_us",
                  "epsilon", "threshold_sigma", "dt_sim")


def _parse_sensor(doc: dict, rig: RigGeometry, seed: int, path: str = "sensor") -> SensorConfig:
    sec = doc
    for key in sec:
        if key not in _SENSOR_FIELDS + ("ideal",):
            raise ConfigError(f"{path}.{key}: unknown field")
    ideal = sec.get("ideal", False)
    if not isinstance(ideal, bool):
        raise ConfigError(f"{path}.ideal: expected true or false")
    kw = {}
    for key in _SENSOR_FIELDS:
        if key in sec:
            kw[key] = _num(sec, key, path, integer=(key == "refractory_us"))
    kw.update(width=rig.camera.width, height=rig.camera.height, seed=seed)
    try:
        return (SensorConfig.ideal if ideal else SensorConfig)(**kw)
    except ValidationError as exc:
        msg = str(exc)
        # constructor messages name "sensor.<field>"; re-root them under path
        raise ConfigError(path + msg[len("sensor"):] if msg.startswith("sensor") else f"{path}: {msg}") from None


def _parse_projector(doc: dict) -> dict:
    sec = _section(doc, "projector", ("frame_rate", "dwell", "band_intensity", "chopper_rate"))
    out = {}
    if "frame_rate" in sec and "dwell" in sec:
        raise ConfigError("projector.dwell: give either frame_rate or dwell, not both")
    for key in ("frame_rate", "dwell", "chopper_rate"):
        if key in sec:
            out[key] = _num(sec, key, "projector", positive=True)
    if "band_intensity" in sec:
        v = sec["band_intensity"]
        if _is_number(v):
            out["band_intensity"] = _num(sec, "band_intensity", "projector", nonneg=True)
        elif isinstance(v, dict) and all(_is_number(x) and x >= 0 for x in v.values()):
            try:
                out["band_intensity"] = {float(k): float(x) for k, x in v.items()}
            except ValueError:
                raise ConfigError("projector.band_intensity: keys must be wavelengths in nm") from None
        else:
            raise ConfigError("projector.band_intensity: expected a number or a {wavelength: value} object")
    return out


def _parse_sweep(doc: dict) -> SweepSettings:
    sec = _section(doc, "sweep", ("parameter", "levels", "lo", "hi", "duration", "grays"))
    kw = {}
    if "parameter" in sec:
        if sec["parameter"] not in ("diff_on", "pr_bias"):
            raise ConfigError(f"sweep.parameter: expected 'diff_on' or 'pr_bias', got {sec['parameter']!r}")
        kw["parameter"] = sec["parameter"]
    for key in ("levels", "grays"):
        if key in sec:
            kw[key] = _num(sec, key, "sweep", integer=True)
    for key in ("lo", "hi", "duration"):
        if key in sec:
            kw[key] = _num(sec, key, "sweep")
    return _wrap("sweep", SweepSettings, **kw)


def parse_config(doc: dict, base_dir: Path = Path("."), seed: int | None = None,
                 output: Path | None = None) -> RunConfig:
    """Validate a config document; ``seed`` and ``output`` override the file's values."""
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    known = ("schema", "pipeline", "scene", "rig", "projector", "sensor", "sweep", "depth",
             "spectral", "segment", "output", "seed")
    for key in doc:
        if key not in known:
            raise ConfigError(f"{key}: unknown field")
    if doc.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"schema: expected {SCHEMA_VERSION}, got {doc.get('schema')!r}")
    pipeline = doc.get("pipeline")
    if pipeline not in PIPELINES:
        raise ConfigError(f"pipeline: expected one of {list(PIPELINES)}, got {pipeline!r}")
    if seed is None:
        seed = _num(doc, "seed", "config", 0, integer=True, nonneg=True)
    if not (0 <= seed < 2 ** 64):
        raise ConfigError("seed: must be an unsigned 64-bit integer")
    if output is None and "output" in doc:
        if not isinstance(doc["output"], str):
            raise ConfigError("output: expected a path string")
        output = Path(doc["output"])
        output = output if output.is_absolute() else base_dir / output

    scene = _parse_scene(doc, base_dir)
    if scene is not None and pipeline == "all":
        raise ConfigError("scene: pipeline 'all' uses each pipeline's default scene")
    if scene is not None and pipeline == "segment" and scene.builtin != "forest":
        raise ConfigError("scene.builtin: the segment pipeline needs the 'forest' scene")
    rig = _parse_rig(doc)
    sensor_doc = _section(doc, "sensor", _SENSOR_FIELDS + ("ideal",))
    sensor = _parse_sensor(sensor_doc, rig, seed % 2 ** 32)
    projector = _parse_projector(doc)
    sweep = _parse_sweep(doc)

    dsec = _section(doc, "depth", ("frames", "median_radius", "row_tolerance", "wavelength", "icp_trim",
                                   "sensor"))
    depth_sensor = None
    if "sensor" in dsec:
        if not isinstance(dsec["sensor"], dict):
            raise ConfigError("depth.sensor: expected an object")
        depth_sensor = _parse_sensor(dict(sensor_doc, **dsec["sensor"]), rig, seed % 2 ** 32, "depth.sensor")
    depth = _wrap("depth", DepthSettings,
                  frames=_num(dsec, "frames", "depth", 1, integer=True, positive=True),
                  median_radius=_num(dsec, "median_radius", "depth", 1, integer=True, nonneg=True),
                  row_tolerance=_num(dsec, "row_tolerance", "depth", 1.0, positive=True),
                  wavelength=_num(dsec, "wavelength", "depth", RGB_WAVELENGTHS[0], positive=True),
                  icp_trim=_num(dsec, "icp_trim", "depth", 0.0, nonneg=True),
                  sensor=depth_sensor)
    if depth.icp_trim >= 1:
        raise ConfigError("depth.icp_trim: must be < 1")

    ssec = _section(doc, "spectral", ("wavelengths",))
    spectral_wl = _num_list(ssec, "wavelengths", "spectral", SPECTRAL_WAVELENGTHS)

    gsec = _section(doc, "segment", ("train", "test", "rgb_noise", "depth_noise"))
    segment = SegmentSettings(
        train=_num(gsec, "train", "segment", 21, integer=True, positive=True),
        test=_num(gsec, "test", "segment", 10, integer=True, positive=True),
        rgb_noise=_num(gsec, "rgb_noise", "segment", 0.02, nonneg=True),
        depth_noise=_num(gsec, "depth_noise", "segment", 0.003, nonneg=True),
    )
    cfg = RunConfig(pipeline, scene, rig, projector, sensor, sweep, depth, spectral_wl, segment, output, seed)
    # build scenes and projectors once so geometry mismatches surface as config errors
    for p in _pipelines(cfg):
        if p != "segment":
            _build_scene(cfg, p)
            _projector_for(cfg, p)
    return cfg


def load_config(path, seed: int | None = None, output: Path | None = None) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config: no such file {str(path)!r}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return parse_config(doc, path.parent, seed, output)


def _pipelines(cfg: RunConfig) -> tuple[str, ...]:
    return ("depth", "rgb", "spectral", "segment") if cfg.pipeline == "all" else (cfg.pipeline,)


def _build_scene(cfg: RunConfig, pipeline: str, **extra) -> SceneModel:
    spec = cfg.scene if cfg.scene is not None else SceneSpec(builtin=DEFAULT_SCENES[pipeline])
    cam = cfg.rig.camera
    if spec.file is not None:
        scene = _wrap("scene.file", load_scene, spec.file)
    else:
        fn = BUILTIN_SCENES[spec.builtin]
        accepted = inspect.signature(fn).parameters
        kw = dict(spec.params)
        kw.update(extra)
        if "width" in accepted:
            kw.setdefault("width", cam.width)
        if "height" in accepted:
            kw.setdefault("height", cam.height)
        if spec.builtin == "wedge":
            kw.setdefault("values", [0.1, 0.2, 0.4, 0.8])
        scene = _wrap("scene.params", fn, **kw)
    if scene.shape != (cam.height, cam.width):
        raise ConfigError(f"scene: {scene.width}x{scene.height} does not match the camera "
                          f"{cam.width}x{cam.height} (rig.camera)")
    return scene


def _band_intensity(cfg: RunConfig, wavelengths) -> float | tuple[float, ...]:
    ip = cfg.projector.get("band_intensity", 4.0)
    if isinstance(ip, dict):
        missing = [w for w in wavelengths if w not in ip]
        if missing:
            raise ConfigError(f"projector.band_intensity: no value for {missing[0]:g} nm")
        return tuple(ip[w] for w in wavelengths)
    return ip


def _projector_for(cfg: RunConfig, pipeline: str) -> ProjectorConfig:
    if pipeline == "depth":
        wl = (cfg.depth.wavelength,)
        res = cfg.rig.projector.resolution
        if "frame_rate" in cfg.projector:
            fr = cfg.projector["frame_rate"]
        else:
            fr = frame_rate_for_dwell(cfg.projector.get("dwell", DEFAULT_DWELL), res)
        return _wrap("projector", ProjectorConfig, resolution=res, frame_rate=fr, wavelengths=wl,
                     band_intensity=_band_intensity(cfg, wl), mode="scanning")
    wl = RGB_WAVELENGTHS if pipeline == "rgb" else cfg.spectral_wavelengths
    return _wrap("projector", ProjectorConfig, resolution=cfg.rig.projector.resolution, wavelengths=wl,
                 band_intensity=_band_intensity(cfg, wl), mode="chopped",
                 chopper_rate=cfg.projector.get("chopper_rate", 100.0))


# ---------------------------------------------------------------- results


@dataclass(frozen=True)
class MetricRow:
    pipeline: str
    scene: str
    method: str
    metric: str
    value: float

    def formatted(self) -> str:
        return format(self.value, ".6g")


CSV_HEADER = "pipeline,scene,method,metric,value"


def write_metrics(rows, path) -> None:
    lines = [CSV_HEADER] + [f"{r.pipeline},{r.scene},{r.method},{r.metric},{r.formatted()}" for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")


def report_tables(rows) -> str:
    """Markdown tables built only from metric rows: one per (pipeline, scene)."""
    out = []
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.pipeline, r.scene), []).append(r)
    for (pipe, scene), grp in groups.items():
        metrics = list(dict.fromkeys(r.metric for r in grp))
        methods = list(dict.fromkeys(r.method for r in grp))
        cell = {(r.method, r.metric): r.formatted() for r in grp}
        out.append(f"## {pipe}: {scene}\n")
        out.append("| method | " + " | ".join(metrics) + " |")
        out.append("|---" * (len(metrics) + 1) + "|")
        for m in methods:
            out.append(f"| {m} | " + " | ".join(cell.get((m, k), "") for k in metrics) + " |")
        out.append("")
    return "\n".join(out)


def _scene_name(cfg: RunConfig, pipeline: str) -> str:
    if cfg.scene is None:
        return DEFAULT_SCENES[pipeline]
    return cfg.scene.builtin if cfg.scene.builtin else cfg.scene.file.stem


# -------------------------------------------------------------- pipelines


def run_depth(cfg: RunConfig, out: Path, threads=None) -> list[MetricRow]:
    scene = _build_scene(cfg, "depth")
    name = _scene_name(cfg, "depth")
    rig, ds = cfg.rig, cfg.depth
    proj = _projector_for(cfg, "depth")
    sched = ScanSchedule.from_config(proj)
    sensor = ds.sensor if ds.sensor is not None else cfg.sensor
    sim = simulate(scene, rig, proj, sensor, ds.frames * sched.frame_time, threads=threads)
    depth = reconstruct_depth(sim.stream, rig, sched, median_radius=ds.median_radius,
                              row_tolerance=ds.row_tolerance)
    fio.write_events(sim.stream, out / "events.csv")
    write_depth(depth, out / "depth.pfm")
    cloud = depth_to_pointcloud(depth, rig.camera)
    fio.write_pointcloud(cloud, out / "cloud.xyz")
    fio.write_image(out / "depth_color.ppm", render_depth_colormap(depth))
    figure_depth(depth, scene.depth, out / "figures" / "depth.png")

    visible = projector_correspondence(scene, rig).visible
    ok = depth.valid & visible
    gt = scene.depth
    n_vis = int(visible.sum())
    rows = [
        ("events", float(len(sim.stream))),
        ("coverage", float(ok.sum()) / n_vis if n_vis else 0.0),
    ]
    if ok.any():
        err = depth.depth[ok] - gt.depth[ok]
        rows.append(("depth_rmse_cm", float(np.sqrt(np.mean(err ** 2)) * 100.0)))
        rows.append(("quant_bound_cm", quantization_bound(float(np.median(gt.depth[ok])), rig) * 100.0))
    target = depth_to_pointcloud(DepthMap(gt.depth, gt.valid & visible), rig.camera)
    if len(cloud) >= 3 and len(target) >= 3:
        try:
            res = icp_align(cloud, target, trim=ds.icp_trim, init="identity")
            rows.append(("rmse_cm", rmse_pointcloud(res.aligned, target)))
            rows.append(("chamfer_cm", chamfer(res.aligned, target)))
        except ValidationError:
            # degenerate reconstruction (e.g. a single row): nothing to align
            pass
    return [MetricRow("depth", name, "event_sl", k, v) for k, v in rows]


def run_rgb(cfg: RunConfig, out: Path, threads=None) -> list[MetricRow]:
    scene = _build_scene(cfg, "rgb")
    name = _scene_name(cfg, "rgb")
    for key in ("blocks", "grays", "panel"):
        if key not in scene.regions:
            raise ConfigError(f"scene: the rgb pipeline needs a chart scene with a {key!r} region")
    proj = _projector_for(cfg, "rgb")
    truth = np.asarray(scene.meta["block_srgb"], dtype=np.float64)
    grays = list(scene.meta["gray_srgb"])
    rows, panels = [], {}
    for method in ("sweep", "count"):
        raw, _ = chart_capture(scene, cfg.rig, proj, cfg.sensor, method, cfg.sweep)
        stages, _ = correct_chart(raw, scene.regions["grays"], grays)
        for err in chart_report(stages, truth, scene.regions["blocks"]):
            rows.append(MetricRow("rgb", name, f"{method}/{err.stage}", "delta_e", err.mean_delta_e))
            rows.append(MetricRow("rgb", name, f"{method}/{err.stage}", "rmse", err.mean_rmse))
        fio.write_image(out / ("rgb.ppm" if method == "sweep" else "rgb_count.ppm"), stages["curve"])
        fio.write_image(out / ("rgb_raw.ppm" if method == "sweep" else "rgb_count_raw.ppm"), stages["raw"])
        panels.update({f"{method} {k}": v for k, v in stages.items()})
    truth_img = _chart_truth_image(scene)
    figure_chart(truth_img, panels, out / "figures" / "chart.png")
    return rows


def _chart_truth_image(scene: SceneModel) -> np.ndarray:
    img = np.zeros(scene.shape + (3,), dtype=np.uint8)
    for box, c in zip(scene.regions["blocks"], scene.meta["block_srgb"]):
        img[box.slices] = c
    for box, g in zip(scene.regions["grays"], scene.meta["gray_srgb"]):
        img[box.slices] = g
    return img


def run_spectral(cfg: RunConfig, out: Path, threads=None) -> list[MetricRow]:
    scene = _build_scene(cfg, "spectral")
    name = _scene_name(cfg, "spectral")
    if "panel" not in scene.regions:
        raise ConfigError("scene: the spectral pipeline needs a scene with a 'panel' region")
    proj = _projector_for(cfg, "spectral")
    cube = measure_cube(scene, cfg.rig, proj, cfg.sensor, cfg.spectral_wavelengths, cfg.sweep)
    pref = float(scene.meta.get("panel_reflectance", 0.99))
    norm = normalize_to_reference(cube, scene.regions["panel"], pref)
    norm.save(out / "bands")
    rows, measured, truth = [], {}, {}
    for region_name, region in scene.regions.items():
        if region_name == "panel" or not hasattr(region, "slices"):
            continue
        idx = int(np.bincount(scene.material_map[region.slices].ravel()).argmax())
        mat = scene.materials[idx]
        sig = spectral_signature(norm, region)
        gt = [float(sample_reflectance(mat, w)) for w, _ in sig]
        err = np.array([v for _, v in sig]) - gt
        rows.append(MetricRow("spectral", name, region_name, "rms_abs", float(np.sqrt(np.mean(err ** 2)))))
        rows.append(MetricRow("spectral", name, region_name, "rms_rel",
                              float(np.sqrt(np.mean((err / np.maximum(gt, 1e-9)) ** 2)))))
        for (w, v) in sig:
            rows.append(MetricRow("spectral", name, region_name, f"r{w:g}", v))
        measured[region_name] = sig
        truth[region_name] = [(float(w), float(sample_reflectance(mat, w)))
                              for w in np.linspace(min(cube.wavelengths), max(cube.wavelengths), 41)]
    figure_signatures(measured, truth, out / "figures" / "signatures.png")
    return rows


def segment_seeds(cfg: RunConfig) -> tuple[list[int], list[int]]:
    base = int(cfg.seed) * 1000
    n_tr, n_te = cfg.segment.train, cfg.segment.test
    return list(range(base, base + n_tr)), list(range(base + n_tr, base + n_tr + n_te))


def run_segment(cfg: RunConfig, out: Path, threads=None) -> list[MetricRow]:
    seg = cfg.segment
    name = _scene_name(cfg, "segment")
    params = dict(cfg.scene.params) if cfg.scene is not None else {}

    def data(seeds):
        items = []
        for s in seeds:
            kw = dict(params, seed=s)
            kw.setdefault("width", cfg.rig.camera.width)
            kw.setdefault("height", cfg.rig.camera.height)
            scene = _wrap("scene.params", BUILTIN_SCENES["forest"], **kw)
            rgb, depth = observe_scene(scene, s, seg.rgb_noise, seg.depth_noise)
            items.append((rgb, extract_features(rgb, depth), scene.labels))
        return items

    tr_seeds, te_seeds = segment_seeds(cfg)
    train_set = [(f, lab) for _, f, lab in data(tr_seeds)]
    test_items = data(te_seeds)
    test_set = [(f, lab) for _, f, lab in test_items]
    rows, ious = [], {}
    for subset in SUBSETS:
        try:
            model = train(train_set, subset)
        except ValidationError as exc:
            raise ConfigError(f"segment: {exc}") from None
        model.save(out / f"model_{subset}.json")
        rep = evaluate(model, test_set)
        ious[subset] = rep.mean
        for c, v in rep.per_class.items():
            rows.append(MetricRow("segment", name, subset, f"iou_{LABEL_NAMES[c]}", v))
        rows.append(MetricRow("segment", name, subset, "iou_mean", rep.mean))
        if subset == "rgbd":
            rgb0, f0, lab0 = test_items[0]
            pred = predict_features(model, f0)
            fio.write_labels(out / "labels.pgm", pred)
            fio.write_labels(out / "labels_truth.pgm", lab0)
            fio.write_image(out / "overlay.ppm", render_overlay(rgb0, pred))
            figure_segmentation(rgb0, pred, lab0, ious, out / "figures" / "segmentation.png")
    return rows


RUNNERS = {"depth": run_depth, "rgb": run_rgb, "spectral": run_spectral, "segment": run_segment}


def _config_echo(cfg: RunConfig) -> dict:
    scene = None
    if cfg.scene is not None:
        scene = {"builtin": cfg.scene.builtin, "params": cfg.scene.params,
                 "file": cfg.scene.file.name if cfg.scene.file else None}
    return {
        "schema": SCHEMA_VERSION,
        "version": __version__,
        "pipeline": cfg.pipeline,
        "seed": cfg.seed,
        "scene": scene,
        "rig": {"camera": asdict(cfg.rig.camera), "projector": asdict(cfg.rig.projector),
                "baseline": cfg.rig.baseline},
        "projector": {k: ({f"{w:g}": x for w, x in v.items()} if isinstance(v, dict) else v)
                      for k, v in cfg.projector.items()},
        "sensor": asdict(cfg.sensor),
        "sweep": asdict(cfg.sweep),
        "depth": asdict(cfg.depth),
        "spectral": {"wavelengths": list(cfg.spectral_wavelengths)},
        "segment": asdict(cfg.segment),
    }


def run(cfg: RunConfig, out: Path | None = None, threads=None) -> Path:
    """Execute the configured pipelines and write the artifact tree to ``out``.

    Artifacts are written to a sibling ``<out>.partial`` directory which
    replaces ``out`` only on success.  An existing ``out`` is replaced only if
    it holds a previous run.
    """
    out = Path(out if out is not None else (cfg.output or "out"))
    if out.exists() and not (out / RUN_MARKER).is_file():
        raise ConfigError(f"output: {str(out)!r} exists and is not a previous run directory")
    partial = out.with_name(out.name + ".partial")
    if partial.exists():
        shutil.rmtree(partial)
    try:
        fio.ensure_dir(partial)
        rows = []
        multi = cfg.pipeline == "all"
        for p in _pipelines(cfg):
            target = fio.ensure_dir(partial / p) if multi else partial
            rows += RUNNERS[p](cfg, target, threads)
        write_metrics(rows, partial / "metrics.csv")
        report = [f"# Run report: {cfg.pipeline}", "",
                  f"seed {cfg.seed}; every number below is a row of metrics.csv.", "",
                  report_tables(rows)]
        figs = sorted(p.relative_to(partial).as_posix() for p in partial.rglob("*.png"))
        if figs:
            report += ["## Figures", ""] + [f"![{Path(f).stem}]({f})" for f in figs] + [""]
        (partial / "report.md").write_text("\n".join(report), encoding="utf-8", newline="\n")
        (partial / RUN_MARKER).write_text(json.dumps(_config_echo(cfg), indent=2, sort_keys=True,
                                                      default=str) + "\n")
    except BaseException:
        shutil.rmtree(partial, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    partial.rename(out)
    return out


# -------------------------------------------------------------------- main


FORMATS = """\
events.csv     '# sensor W H' line, header 't_us,x,y,p', one integer row per event,
               sorted by (t, y, x, p)
*.pfm          Portable Float Map ('Pf' gray / 'PF' color), little-endian (scale < 0),
               rows stored bottom to top
*.pgm / *.ppm  binary P5 / P6, maxval 255; masks are 0/255, label maps hold class ids
               0 background, 1 leaves, 2 branches
cloud.xyz      one 'x y z' point per line in meters, camera frame, 9 significant digits
bands/         manifest.json (schema 1) plus band_<nm>.pfm reflectance images
metrics.csv    header 'pipeline,scene,method,metric,value'
model_*.json   diagonal Gaussian classifier (subset, means, variances, priors)
run.json       resolved configuration of the run
"""


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="event-spectra",
                                 description="Event-camera structured light: simulate, reconstruct, evaluate.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a pipeline from a JSON config")
    r.add_argument("--config", required=True, help="path to the run config (JSON, schema 1)")
    r.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
    r.add_argument("--seed", type=int, default=None, help="seed (overrides the config)")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("--config", required=True)
    sub.add_parser("formats", help="describe the artifact file formats")
    return ap


def _threads_env():
    raw = os.environ.get("EVENT_SPECTRA_THREADS")
    return int(raw) if raw and raw.isdigit() and int(raw) > 0 else None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "formats":
        sys.stdout.write(FORMATS)
        return EXIT_OK
    try:
        cfg = load_config(args.config, seed=getattr(args, "seed", None), output=getattr(args, "out", None))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"ok: pipeline {cfg.pipeline}, seed {cfg.seed}")
        return EXIT_OK
    try:
        out = run(cfg, threads=_threads_env())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported and mapped to the pipeline exit code
        print(f"pipeline error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    print(f"wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
