"""Multispectral band sets and normalized-difference indices."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Mapping

import numpy as np

from .raster import AOI, BinaryMask, aoi_to_pixels, read_patch, write_patch


class SpectralError(ValueError):
    code = "spectral-error"


class MissingBandError(SpectralError):
    code = "missing-band"


class BandDimensionError(SpectralError):
    code = "dimension-mismatch"


class UnknownThemeError(SpectralError, KeyError):
    code = "unknown-theme"


_LANDSAT = {
    "SR_B1": "coastal aerosol",
    "SR_B2": "blue",
    "SR_B3": "green",
    "SR_B4": "red",
    "SR_B5": "near infrared",
    "SR_B6": "SWIR 1",
    "SR_B7": "SWIR 2",
    "ST_B10": "thermal",
}

_SENTINEL2 = {
    "B1": "coastal aerosol",
    "B2": "blue",
    "B3": "green",
    "B4": "red",
    "B5": "red edge",
    "B6": "red edge",
    "B7": "red edge",
    "B8": "near infrared",
    "B8A": "narrow near infrared",
    "B9": "water vapor",
    "B11": "SWIR 1",
    "B12": "SWIR 2",
    "SCL": "scene classification",
    "MSK_CLDPRB": "cloud probability",
}

# synthetic scenes carry the Sentinel-2 bands the four indices need
_SYNTHETIC = {k: _SENTINEL2[k] for k in ("B2", "B3", "B4", "B8", "B11")}

BAND_ROLES: Mapping[str, Mapping[str, str]] = {
    "landsat8": _LANDSAT,
    "landsat9": _LANDSAT,
    "sentinel2a": _SENTINEL2,
    "sentinel2b": _SENTINEL2,
    "synthetic": _SYNTHETIC,
}

# role name used by index formulas -> role text in the band tables
_ROLE_TEXT = {"green": "green", "red": "red", "nir": "near infrared", "swir1": "SWIR 1"}

# (positive band, negative band): index = (pos - neg) / (pos + neg)
INDEX_BANDS = {
    "ndvi": ("nir", "red"),
    "ndwi": ("green", "nir"),
    "ndbi": ("swir1", "nir"),
    "ndsi": ("green", "swir1"),
}

DEFAULT_THRESHOLDS = {"ndvi": 0.3, "ndwi": 0.2, "ndbi": 0.0, "ndsi": 0.4}

THEMES = {
    "vegetation": "ndvi",
    "water": "ndwi",
    "urban": "ndbi",
    "snow": "ndsi",
}


def band_roles(platform: str) -> dict[str, str]:
    try:
        return dict(BAND_ROLES[platform.lower()])
    except KeyError:
        raise SpectralError(f"unknown platform {platform!r}; known: {sorted(BAND_ROLES)}") from None


def band_for_role(platform: str, role: str) -> str:
    text = _ROLE_TEXT[role]
    for name, r in BAND_ROLES[platform.lower()].items():
        if r == text:
            return name
    raise MissingBandError(f"platform {platform} has no {text} band")


@dataclass(frozen=True, eq=False)
class BandSet:
    platform: str
    bands: Mapping[str, np.ndarray]
    capture_time: datetime | None = None
    gsd_m: float | None = None
    scene_id: str | None = None

    def __post_init__(self):
        if self.platform.lower() not in BAND_ROLES:
            raise SpectralError(f"unknown platform {self.platform!r}")
        bands = {}
        shape = None
        for name in sorted(self.bands):
            arr = np.asarray(self.bands[name], dtype=np.float32)
            if arr.ndim == 3 and arr.shape[2] == 1:
                arr = arr[:, :, 0]
            if arr.ndim != 2:
                raise BandDimensionError(f"band {name} is not single-channel")
            if shape is not None and arr.shape != shape:
                raise BandDimensionError(f"band {name} has shape {arr.shape}, expected {shape}")
            shape = arr.shape
            bands[name] = arr
        object.__setattr__(self, "bands", bands)

    @property
    def shape(self) -> tuple[int, int] | None:
        for arr in self.bands.values():
            return arr.shape
        return None

    def band(self, role: str) -> np.ndarray:
        name = band_for_role(self.platform, role)
        if name not in self.bands:
            raise MissingBandError(f"band {name} ({_ROLE_TEXT[role]}) not loaded for {self.platform}")
        return self.bands[name]

    def crop(self, aoi: AOI) -> "BandSet":
        h, w = self.shape
        x0, y0, x1, y1 = aoi_to_pixels(aoi, w, h)
        return BandSet(self.platform, {k: v[y0:y1, x0:x1].copy() for k, v in self.bands.items()},
                       self.capture_time, self.gsd_m, self.scene_id)


def normalized_difference(pos: np.ndarray, neg: np.ndarray) -> np.ndarray:
    """(pos - neg) / (pos + neg); NaN where the denominator is zero."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if pos.shape != neg.shape:
        raise BandDimensionError(f"band shapes differ: {pos.shape} vs {neg.shape}")
    den = pos + neg
    out = np.full(pos.shape, np.nan)
    np.divide(pos - neg, den, out=out, where=den != 0)
    return np.clip(out, -1.0, 1.0)


@dataclass(frozen=True, eq=False)
class IndexResult:
    index_name: str
    values: np.ndarray = field(repr=False)
    mean: float
    median: float
    frac_above: float
    threshold: float
    valid_pixels: int

    def stats(self) -> dict:
        return {"index": self.index_name, "mean": self.mean, "median": self.median,
                "fraction_above_threshold": self.frac_above, "threshold": self.threshold,
                "valid_pixels": self.valid_pixels}


def compute_index(bandset: BandSet, index: str, threshold: float | None = None) -> IndexResult:
    index = index.lower()
    if index not in INDEX_BANDS:
        raise SpectralError(f"unknown index {index!r}; known: {sorted(INDEX_BANDS)}")
    pos_role, neg_role = INDEX_BANDS[index]
    values = normalized_difference(bandset.band(pos_role), bandset.band(neg_role))
    thr = DEFAULT_THRESHOLDS[index] if threshold is None else float(threshold)
    valid = values[~np.isnan(values)]
    if valid.size:
        mean = float(valid.mean())
        median = float(np.median(valid))
        frac = float(np.count_nonzero(valid > thr)) / valid.size
    else:
        mean = median = float("nan")
        frac = 0.0
    return IndexResult(index, values, mean, median, frac, thr, int(valid.size))


def thematic_mask(bandset: BandSet, theme: str, threshold: float | None = None) -> BinaryMask:
    if theme not in THEMES:
        raise UnknownThemeError(f"unknown theme {theme!r}; known: {sorted(THEMES)}")
    result = compute_index(bandset, THEMES[theme], threshold)
    with np.errstate(invalid="ignore"):
        bits = result.values > result.threshold  # NaN compares False
    return BinaryMask(bits)


_EXPRESSIONS = {
    "ndvi": "(NIR - Red) / (NIR + Red)",
    "ndwi": "(Green - NIR) / (Green + NIR)",
    "ndbi": "(SWIR1 - NIR) / (SWIR1 + NIR)",
    "ndsi": "(Green - SWIR1) / (Green + SWIR1)",
}
_ROLE_LABEL = {"nir": "NIR", "red": "Red", "green": "Green", "swir1": "SWIR1"}


def theme_index_lookup(theme: str) -> dict:
    key = theme.strip().lower()
    if key not in THEMES:
        raise UnknownThemeError(f"unknown theme {theme!r}; known themes: {', '.join(sorted(THEMES))}")
    idx = THEMES[key]
    pos, neg = INDEX_BANDS[idx]
    return {
        "theme": key,
        "index_name": idx.upper(),
        "expression": _EXPRESSIONS[idx],
        "required_bands": [_ROLE_LABEL[pos], _ROLE_LABEL[neg]],
        "default_threshold": DEFAULT_THRESHOLDS[idx],
    }


# --- band folders on disk ----------------------------------------------------

SCENE_DESCRIPTOR = "scene.json"
BAND_SUFFIX = ".eog"


def save_bandset(bandset: BandSet, folder: str | Path) -> None:
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    for name, arr in sorted(bandset.bands.items()):
        write_patch(folder / f"{name}{BAND_SUFFIX}", arr)
    desc = {"platform": bandset.platform, "gsd_m": bandset.gsd_m,
            "capture_time": bandset.capture_time.strftime("%Y-%m-%dT%H:%M:%SZ") if bandset.capture_time else None}
    (folder / SCENE_DESCRIPTOR).write_text(json.dumps(desc, sort_keys=True) + "\n")


def load_bandset(folder: str | Path, scene_id: str | None = None) -> BandSet:
    from .datalake import parse_time

    folder = Path(folder)
    desc = json.loads((folder / SCENE_DESCRIPTOR).read_text())
    bands = {p.name[: -len(BAND_SUFFIX)]: read_patch(p) for p in sorted(folder.glob(f"*{BAND_SUFFIX}"))}
    ts = desc.get("capture_time")
    return BandSet(desc["platform"], bands, parse_time(ts) if ts else None, desc.get("gsd_m"), scene_id)
