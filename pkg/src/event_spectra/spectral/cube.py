"""Per-band reflectance images, reference-panel normalization and region signatures."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import io as fio
from ..core.types import Box, ValidationError


@dataclass(frozen=True)
class SpectralCube:
    """Stack of reflectance images, one per wavelength (nm), shape ``(B, H, W)``."""

    wavelengths: tuple[float, ...]
    bands: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        wl = tuple(float(w) for w in self.wavelengths)
        bands = np.asarray(self.bands, dtype=np.float64)
        if bands.ndim != 3 or bands.shape[0] != len(wl):
            raise ValidationError("cube needs one 2-D band image per wavelength")
        if any(b <= a for a, b in zip(wl, wl[1:])):
            raise ValidationError("cube wavelengths must be strictly increasing")
        if np.any(~np.isfinite(bands)) or np.any(bands < 0):
            raise ValidationError("cube values must be finite and >= 0")
        bands = bands.copy()
        bands.flags.writeable = False
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "bands", bands)

    @classmethod
    def from_bands(cls, pairs, meta=None) -> "SpectralCube":
        pairs = sorted(pairs, key=lambda p: p[0])
        return cls(tuple(p[0] for p in pairs), np.stack([p[1] for p in pairs]), dict(meta or {}))

    @property
    def shape(self) -> tuple[int, int]:
        return self.bands.shape[1:]

    def band(self, wavelength: float) -> np.ndarray:
        for i, w in enumerate(self.wavelengths):
            if abs(w - wavelength) < 1e-9:
                return self.bands[i]
        raise KeyError(wavelength)

    def save(self, directory) -> Path:
        """Write ``manifest.json`` plus ``band_<nm>.pfm`` per band."""
        d = fio.ensure_dir(directory)
        files = []
        for w, img in zip(self.wavelengths, self.bands):
            name = f"band_{w:g}.pfm"
            fio.write_image(d / name, img.astype(np.float32))
            files.append({"wavelength_nm": w, "file": name})
        manifest = {"schema": 1, "bands": files, "meta": self.meta}
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return d / "manifest.json"

    @classmethod
    def load(cls, directory) -> "SpectralCube":
        d = Path(directory)
        doc = json.loads((d / "manifest.json").read_text())
        pairs = [(b["wavelength_nm"], fio.read_image(d / b["file"]).astype(np.float64)) for b in doc["bands"]]
        return cls.from_bands(pairs, doc.get("meta", {}))


def _region_values(img: np.ndarray, region) -> np.ndarray:
    if isinstance(region, Box):
        h, w = img.shape
        if not region.inside(w, h):
            raise ValidationError(f"region {region} outside {w}x{h} image")
        vals = img[region.slices]
    else:
        mask = np.asarray(region, dtype=bool)
        if mask.shape != img.shape:
            raise ValidationError("region mask shape does not match the image")
        vals = img[mask]
    if vals.size == 0:
        raise ValidationError("empty region")
    return vals


def region_mean(img: np.ndarray, region) -> float:
    return float(_region_values(img, region).mean())


def normalize_to_reference(cube: SpectralCube, panel_region, panel_reflectance: float = 0.99) -> SpectralCube:
    """Scale every band so the panel region averages ``panel_reflectance``."""
    out = []
    for w, img in zip(cube.wavelengths, cube.bands):
        m = region_mean(img, panel_region)
        if m == 0:
            raise ValidationError(f"panel mean is zero in band {w:g} nm")
        out.append(img / (m / panel_reflectance))
    meta = dict(cube.meta, normalized_to=panel_reflectance)
    return SpectralCube(cube.wavelengths, np.stack(out), meta)


def spectral_signature(cube: SpectralCube, region) -> list[tuple[float, float]]:
    """Mean reflectance of a region in every band."""
    return [(w, region_mean(img, region)) for w, img in zip(cube.wavelengths, cube.bands)]
