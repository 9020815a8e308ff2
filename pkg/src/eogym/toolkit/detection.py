"""Ground-truth annotations and the two detector backends.

Verified detection passes annotation boxes through the target filter.
Unverified detection goes through a pluggable detector; the default one is
a seeded noisy oracle that jitters, drops and invents boxes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

import numpy as np

from ..raster import BBox, RasterPatch, box_iou, clip_box
from .semantic import TargetFilter, semantic_target_filter
from .types import NoiseConfig, Observation, ToolError


@dataclass(frozen=True)
class AnnotatedObject:
    label: str
    bbox: BBox | None = None
    polygon: tuple[tuple[float, float], ...] | None = None
    attributes: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.bbox is None and not self.polygon:
            raise ValueError("annotated object needs a bbox or polygon")

    @property
    def box(self) -> BBox:
        if self.bbox is not None:
            return replace(self.bbox, label=self.label)
        xs = [p[0] for p in self.polygon]
        ys = [p[1] for p in self.polygon]
        return BBox(min(xs), min(ys), max(xs), max(ys), label=self.label)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"label": self.label}
        if self.bbox is not None:
            d["bbox"] = list(self.bbox.coords)
        if self.polygon:
            d["polygon"] = [list(p) for p in self.polygon]
        if self.attributes:
            d["attributes"] = dict(self.attributes)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "AnnotatedObject":
        bbox = BBox(*d["bbox"], label=d["label"]) if d.get("bbox") else None
        poly = tuple(tuple(p) for p in d["polygon"]) if d.get("polygon") else None
        return cls(d["label"], bbox, poly, dict(d.get("attributes") or {}))


@dataclass(frozen=True)
class GroundTruthAnnotation:
    record_id: str
    width: int
    height: int
    objects: tuple[AnnotatedObject, ...] = ()
    scene: str | None = None

    def __post_init__(self):
        for obj in self.objects:
            b = obj.box
            if b.x_min < 0 or b.y_min < 0 or b.x_max > self.width or b.y_max > self.height:
                raise ValueError(f"{self.record_id}: object {obj.label} outside {self.width}x{self.height}")

    @property
    def labels(self) -> set[str]:
        return {o.label for o in self.objects}

    def to_dict(self) -> dict:
        d = {"record_id": self.record_id, "width": self.width, "height": self.height,
             "objects": [o.to_dict() for o in self.objects]}
        if self.scene is not None:
            d["scene"] = self.scene
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "GroundTruthAnnotation":
        return cls(d["record_id"], int(d["width"]), int(d["height"]),
                   tuple(AnnotatedObject.from_dict(o) for o in d.get("objects", ())), d.get("scene"))


def load_annotations(path: str | Path) -> dict[str, GroundTruthAnnotation]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            ann = GroundTruthAnnotation.from_dict(json.loads(line))
            out[ann.record_id] = ann
    return out


def write_annotations(annotations: Iterable[GroundTruthAnnotation], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ann in annotations:
            fh.write(json.dumps(ann.to_dict(), sort_keys=True) + "\n")


@dataclass(frozen=True)
class Detection:
    """A box in some image frame plus the annotation attributes it came from."""

    box: BBox
    attributes: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = self.box.to_dict()
        if self.attributes:
            d["attributes"] = dict(self.attributes)
        return d


def select_objects(ann: GroundTruthAnnotation, target: str,
                   target_filter: TargetFilter | None = None) -> list[Detection]:
    """Annotation objects whose label matches ``target``, in annotation order."""
    keep = semantic_target_filter(target, ann.labels, target_filter)
    return [Detection(o.box, o.attributes) for o in ann.objects if o.label in keep]


def to_patch_frame(dets: Sequence[Detection], patch: RasterPatch) -> list[Detection]:
    """Shift root-frame boxes into ``patch`` coordinates, clipping at its edges."""
    ox, oy = patch.origin
    out = []
    for d in dets:
        b = replace(d.box, x_min=d.box.x_min - ox, y_min=d.box.y_min - oy,
                    x_max=d.box.x_max - ox, y_max=d.box.y_max - oy)
        clipped = clip_box(b, patch.width, patch.height)
        if clipped is not None:
            out.append(Detection(clipped, d.attributes))
    return out


def boxes_observation(dets: Sequence[Detection], target: str, patch: RasterPatch, **extra) -> Observation:
    if not dets:
        return Observation.empty("boxes", f"no '{target}' objects found")
    payload = {"target": target, "image_size": [patch.width, patch.height], "count": len(dets),
               "boxes": [d.to_dict() for d in dets]}
    payload.update(extra)
    return Observation.ok("boxes", payload)


def detect_verified(ann: GroundTruthAnnotation | None, target: str, patch: RasterPatch,
                    target_filter: TargetFilter | None = None) -> Observation:
    if ann is None:
        return Observation.error("no-ground-truth", f"no annotation for image {patch.root_id}")
    dets = to_patch_frame(select_objects(ann, target, target_filter), patch)
    return boxes_observation(dets, target, patch)


class Detector(Protocol):
    def detect(self, ann: GroundTruthAnnotation | None, target: str, patch: RasterPatch,
               seed: int) -> list[Detection]: ...


class NoisyOracleDetector:
    """Perturbs ground truth: Gaussian corner jitter, random drops, spurious boxes."""

    def __init__(self, noise: NoiseConfig = NoiseConfig(), target_filter: TargetFilter | None = None):
        self.noise = noise
        self.target_filter = target_filter

    def detect(self, ann, target, patch, seed):
        if ann is None:
            raise ToolError("no-ground-truth", f"noisy oracle needs an annotation for {patch.root_id}")
        rng = np.random.default_rng(seed)
        n = self.noise
        W, H = float(ann.width), float(ann.height)
        out: list[Detection] = []
        truth = select_objects(ann, target, self.target_filter)
        for d in truth:
            if n.drop_prob > 0 and rng.random() < n.drop_prob:
                continue
            b = d.box
            if n.jitter_px > 0:
                j = rng.normal(0.0, n.jitter_px, size=4)
                xs = sorted((b.x_min + j[0], b.x_max + j[2]))
                ys = sorted((b.y_min + j[1], b.y_max + j[3]))
                x0, x1 = max(0.0, xs[0]), min(W, xs[1])
                y0, y1 = max(0.0, ys[0]), min(H, ys[1])
                if x1 - x0 < 1.0 or y1 - y0 < 1.0:
                    continue
                b = replace(b, x_min=float(x0), y_min=float(y0), x_max=float(x1), y_max=float(y1))
            out.append(Detection(b, d.attributes))
        if n.fp_rate > 0:
            n_fp = int(rng.binomial(max(1, len(truth)), n.fp_rate))
            for _ in range(n_fp):
                w = float(rng.uniform(0.05, 0.2) * W)
                h = float(rng.uniform(0.05, 0.2) * H)
                x0 = float(rng.uniform(0, W - w))
                y0 = float(rng.uniform(0, H - h))
                out.append(Detection(BBox(x0, y0, x0 + w, y0 + h, label=target.strip().lower(),
                                          score=round(float(rng.uniform(0.3, 0.6)), 3))))
        return to_patch_frame(out, patch)


def detect_unverified(ann: GroundTruthAnnotation | None, target: str, patch: RasterPatch, seed: int,
                      detector: Detector | None = None) -> Observation:
    detector = detector or NoisyOracleDetector()
    try:
        dets = detector.detect(ann, target, patch, seed)
    except ToolError as exc:
        return Observation.error(exc.code, exc.message)
    return boxes_observation(dets, target, patch)


def cross_modal_confirm(optical: Sequence[Detection], sar: Sequence[Detection],
                        iou_threshold: float = 0.5) -> list[Detection]:
    """Optical boxes with a same-label SAR box at IoU >= threshold."""
    kept = []
    for d in optical:
        if any(s.box.label == d.box.label and box_iou(d.box, s.box) >= iou_threshold for s in sar):
            kept.append(d)
    return kept
