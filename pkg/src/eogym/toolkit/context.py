"""Per-episode execution state: loaded rasters and derived handles."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ..datalake import DataLakeIndex, DataLakeRecord, UnknownRecordError
from ..raster import BinaryMask, Provenance, RasterPatch, read_patch
from ..spectral import BandSet
from .detection import Detector, GroundTruthAnnotation, NoisyOracleDetector
from .semantic import TargetFilter
from .types import ExecutionMode, ToolError


class PatchStore:
    """Read-through cache of record pixels; arrays are frozen once loaded."""

    def __init__(self, index: DataLakeIndex):
        self.index = index
        self._pixels: dict[str, np.ndarray] = {}
        self._scenes: dict[str, BandSet] = {}
        self._lock = threading.Lock()

    def pixels(self, record_id: str) -> np.ndarray:
        px = self._pixels.get(record_id)
        if px is None:
            rec = self.index.get(record_id)
            px = read_patch(self.index.resolve_path(rec.path))
            px.setflags(write=False)
            with self._lock:
                px = self._pixels.setdefault(record_id, px)
        return px

    def patch(self, record_id: str) -> RasterPatch:
        rec = self.index.get(record_id)
        px = self.pixels(record_id)
        if rec.base_image_id is not None:
            base = self.pixels(rec.base_image_id)
            ox, oy = rec.base_offset or (0, 0)
            prov = Provenance(rec.base_image_id, ox, oy, base.shape[1], base.shape[0])
            return RasterPatch(px, image_id=record_id, provenance=prov, base=base)
        return RasterPatch(px, image_id=record_id)

    def bandset(self, record_id: str) -> BandSet:
        bs = self._scenes.get(record_id)
        if bs is None:
            rec = self.index.get(record_id)
            bands = {}
            for name, rel in rec.band_files:
                arr = read_patch(self.index.resolve_path(rel))[:, :, 0]
                arr.setflags(write=False)
                bands[name] = arr
            bs = BandSet(rec.sensor, bands, rec.capture_time, rec.gsd_m, scene_id=record_id)
            with self._lock:
                bs = self._scenes.setdefault(record_id, bs)
        return bs


@dataclass
class ImageHandle:
    patch: RasterPatch
    modality: str
    record_id: str  # record the pixels ultimately come from


@dataclass
class EpisodeContext:
    index: DataLakeIndex
    annotations: Mapping[str, GroundTruthAnnotation]
    mode: ExecutionMode = field(default_factory=ExecutionMode)
    exposed: frozenset[str] | None = None  # model-facing names; None = everything
    store: PatchStore | None = None
    target_filter: TargetFilter | None = None
    detector: Detector | None = None
    cross_modal_iou: float = 0.5
    images: dict[str, ImageHandle] = field(default_factory=dict)
    scenes: dict[str, BandSet] = field(default_factory=dict)
    masks: dict[str, BinaryMask] = field(default_factory=dict)
    _counters: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.store is None:
            self.store = PatchStore(self.index)
        if self.detector is None:
            self.detector = NoisyOracleDetector(self.mode.noise, self.target_filter)

    def new_handle(self, prefix: str) -> str:
        n = self._counters.get(prefix, 0) + 1
        self._counters[prefix] = n
        return f"{prefix}_{n}"

    def record(self, record_id: str) -> DataLakeRecord:
        try:
            return self.index.get(record_id)
        except UnknownRecordError:
            raise ToolError("unknown-image", f"no image or record named {record_id!r}") from None

    def image(self, ref: str) -> ImageHandle:
        if ref in self.images:
            return self.images[ref]
        rec = self.record(ref)
        if rec.modality == "multispectral_scene":
            raise ToolError("modality-mismatch", f"{ref} is a multispectral folder, not an image")
        handle = ImageHandle(self.store.patch(ref), rec.modality, ref)
        self.images[ref] = handle
        return handle

    def scene(self, ref: str) -> BandSet:
        if ref in self.scenes:
            return self.scenes[ref]
        rec = self.record(ref)
        if rec.modality != "multispectral_scene":
            raise ToolError("modality-mismatch", f"{ref} is not a multispectral folder")
        bs = self.store.bandset(ref)
        self.scenes[ref] = bs
        return bs

    def mask(self, ref: str) -> BinaryMask:
        try:
            return self.masks[ref]
        except KeyError:
            raise ToolError("unknown-mask", f"no mask named {ref!r}") from None

    def annotation_for(self, handle: ImageHandle) -> GroundTruthAnnotation | None:
        root = handle.patch.root_id
        ann = self.annotations.get(root) if root else None
        if ann is None:
            ann = self.annotations.get(handle.record_id)
        return ann

    def add_image(self, patch: RasterPatch, modality: str, record_id: str) -> str:
        key = self.new_handle("img")
        self.images[key] = ImageHandle(patch, modality, record_id)
        return key

    def add_scene(self, bandset: BandSet) -> str:
        key = self.new_handle("ms")
        self.scenes[key] = bandset
        return key

    def add_mask(self, mask: BinaryMask) -> str:
        key = self.new_handle("mask")
        self.masks[key] = mask
        return key

    def describe_image(self, key: str) -> dict[str, Any]:
        h = self.images[key] if key in self.images else self.image(key)
        p = h.patch
        rec = self.index.get(h.record_id)
        d: dict[str, Any] = {"image_id": key, "modality": h.modality, "width": p.width, "height": p.height}
        if p.provenance is not None:
            d["origin"] = list(p.origin)
            d["base_size"] = [p.provenance.base_width, p.provenance.base_height]
        if rec.capture_time is not None:
            d["capture_time"] = rec.capture_time.strftime("%Y-%m-%dT%H:%M:%SZ")
        if rec.gsd_m is not None:
            d["gsd_m"] = rec.gsd_m
        if "edge_clamped" in p.meta:
            d["edge_clamped"] = bool(p.meta["edge_clamped"])
        return d
