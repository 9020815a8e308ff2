"""Pixel-space geometry: patches, AOI crops, pan/zoom, boxes and masks.

Image coordinates have the origin at the top-left corner and +y pointing
down, so "above" means a smaller y. Pixel grids are ``(height, width,
channels)`` float32 arrays with values in [0, 1].
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

_EPS = 1e-9


class RasterError(ValueError):
    code = "raster-error"


class DegenerateAOIError(RasterError):
    code = "degenerate-aoi"


class MissingProvenanceError(RasterError):
    code = "missing-provenance"


class DimensionMismatchError(RasterError):
    code = "dimension-mismatch"


class InvalidBoxError(RasterError):
    code = "invalid-box"


@dataclass(frozen=True)
class Provenance:
    """Where a patch sits inside its base image."""

    base_image_id: str
    origin_x: int
    origin_y: int
    base_width: int
    base_height: int


@dataclass(frozen=True, eq=False)
class RasterPatch:
    pixels: np.ndarray
    image_id: str | None = None
    provenance: Provenance | None = None
    # Base pixels are carried along so pan/zoom can read outside the window.
    base: np.ndarray | None = field(default=None, repr=False)
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3) or px.shape[0] < 1 or px.shape[1] < 1:
            raise RasterError(f"bad pixel grid shape {np.shape(self.pixels)}")
        object.__setattr__(self, "pixels", px)
        p = self.provenance
        if p is not None:
            h, w = px.shape[:2]
            if (p.origin_x < 0 or p.origin_y < 0 or p.origin_x + w > p.base_width
                    or p.origin_y + h > p.base_height):
                raise RasterError("patch window exceeds base image bounds")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def root_id(self) -> str | None:
        return self.provenance.base_image_id if self.provenance else self.image_id

    @property
    def origin(self) -> tuple[int, int]:
        p = self.provenance
        return (p.origin_x, p.origin_y) if p else (0, 0)

    def __eq__(self, other):
        if not isinstance(other, RasterPatch):
            return NotImplemented
        return (self.image_id == other.image_id and self.provenance == other.provenance
                and np.array_equal(self.pixels, other.pixels))


@dataclass(frozen=True)
class AOI:
    """Normalized axis-aligned window, all edges in [0, 1]."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        vals = (self.x0, self.y0, self.x1, self.y1)
        if any(not math.isfinite(v) or v < 0.0 or v > 1.0 for v in vals):
            raise DegenerateAOIError(f"AOI edges must lie in [0, 1]: {vals}")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise DegenerateAOIError(f"AOI must satisfy x0 < x1 and y0 < y1: {vals}")


def aoi_to_pixels(aoi: AOI, width: int, height: int) -> tuple[int, int, int, int]:
    # floor the min edge, ceil the max edge
    x0 = max(0, math.floor(aoi.x0 * width + _EPS))
    y0 = max(0, math.floor(aoi.y0 * height + _EPS))
    x1 = min(width, math.ceil(aoi.x1 * width - _EPS))
    y1 = min(height, math.ceil(aoi.y1 * height - _EPS))
    if x1 <= x0 or y1 <= y0:
        raise DegenerateAOIError(f"AOI {aoi} is empty on a {width}x{height} grid")
    return x0, y0, x1, y1


def _window(patch: RasterPatch, origin_x: int, origin_y: int, w: int, h: int, meta=None) -> RasterPatch:
    """New patch over the base image at an absolute window."""
    p = patch.provenance
    px = patch.base[origin_y:origin_y + h, origin_x:origin_x + w].copy()
    return RasterPatch(px, image_id=None,
                       provenance=replace(p, origin_x=origin_x, origin_y=origin_y),
                       base=patch.base, meta=dict(meta or {}))


def crop_pixels(patch: RasterPatch, x0: int, y0: int, x1: int, y1: int) -> RasterPatch:
    """Crop by a pixel rectangle relative to ``patch``; provenance composes."""
    if not (0 <= x0 < x1 <= patch.width and 0 <= y0 < y1 <= patch.height):
        raise DegenerateAOIError(f"pixel window ({x0},{y0},{x1},{y1}) outside {patch.width}x{patch.height}")
    px = patch.pixels[y0:y1, x0:x1].copy()
    if patch.provenance is None:
        if patch.image_id is None:
            raise MissingProvenanceError("cannot crop an anonymous patch without provenance")
        prov = Provenance(patch.image_id, x0, y0, patch.width, patch.height)
        base = patch.pixels
    else:
        p = patch.provenance
        prov = replace(p, origin_x=p.origin_x + x0, origin_y=p.origin_y + y0)
        base = patch.base
    return RasterPatch(px, provenance=prov, base=base)


def crop_aoi(patch: RasterPatch, aoi: AOI) -> RasterPatch:
    x0, y0, x1, y1 = aoi_to_pixels(aoi, patch.width, patch.height)
    return crop_pixels(patch, x0, y0, x1, y1)


_PAN = {"up": (0, -1), "down": (0, 1), "left": (-1, 0), "right": (1, 0)}


def _require_base(patch: RasterPatch):
    if patch.provenance is None or patch.base is None:
        raise MissingProvenanceError("navigation needs a patch that is a window into a base image")


def pan(patch: RasterPatch, direction: str, step_frac: float = 0.5) -> RasterPatch:
    """Shift the window by ``step_frac`` of its extent, clamped to the base."""
    _require_base(patch)
    if direction not in _PAN:
        raise ValueError(f"unknown pan direction {direction!r}")
    if not step_frac > 0:
        raise ValueError("step_frac must be positive")
    p = patch.provenance
    dx, dy = _PAN[direction]
    step_x = round(step_frac * patch.width) * dx
    step_y = round(step_frac * patch.height) * dy
    nx = min(max(p.origin_x + step_x, 0), p.base_width - patch.width)
    ny = min(max(p.origin_y + step_y, 0), p.base_height - patch.height)
    clamped = (nx - p.origin_x, ny - p.origin_y) != (step_x, step_y)
    return _window(patch, nx, ny, patch.width, patch.height, {"edge_clamped": clamped})


def zoom_out(patch: RasterPatch, factor: float = 2.0) -> RasterPatch:
    """Grow the window around its centre; the result always contains the input."""
    _require_base(patch)
    if not factor > 1.0:
        raise ValueError("zoom factor must be > 1")
    p = patch.provenance
    w, h = patch.width, patch.height
    nw = min(p.base_width, max(w, round(factor * w)))
    nh = min(p.base_height, max(h, round(factor * h)))
    nx = min(max(p.origin_x - (nw - w) // 2, 0), p.base_width - nw)
    ny = min(max(p.origin_y - (nh - h) // 2, 0), p.base_height - nh)
    clamped = (nw, nh) != (round(factor * w), round(factor * h)) or \
        (nx, ny) != (p.origin_x - (nw - w) // 2, p.origin_y - (nh - h) // 2)
    return _window(patch, nx, ny, nw, nh, {"edge_clamped": clamped})


# --- boxes -----------------------------------------------------------------

@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    label: str = ""
    score: float | None = None
    truncated: bool = False

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidBoxError(f"box needs x_min < x_max and y_min < y_max: {self.coords}")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise InvalidBoxError(f"score {self.score} outside [0, 1]")

    @property
    def coords(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"bbox": list(self.coords), "label": self.label}
        if self.score is not None:
            d["score"] = self.score
        if self.truncated:
            d["truncated"] = True
        return d


def normalize_bboxes(boxes: Sequence[BBox], from_dims: tuple[float, float],
                     to_dims: tuple[float, float]) -> list[BBox]:
    """Rescale boxes from a ``(width, height)`` frame to another."""
    fw, fh = from_dims
    tw, th = to_dims
    if min(fw, fh, tw, th) <= 0:
        raise ValueError("image dimensions must be positive")
    sx, sy = tw / fw, th / fh
    return [replace(b, x_min=b.x_min * sx, y_min=b.y_min * sy, x_max=b.x_max * sx, y_max=b.y_max * sy)
            for b in boxes]


def clip_box(box: BBox, width: float, height: float) -> BBox | None:
    """Clip to the frame; None if nothing of the box remains."""
    x0, y0 = max(box.x_min, 0.0), max(box.y_min, 0.0)
    x1, y1 = min(box.x_max, float(width)), min(box.y_max, float(height))
    if x1 <= x0 or y1 <= y0:
        return None
    cut = (x0, y0, x1, y1) != box.coords
    return replace(box, x_min=x0, y_min=y0, x_max=x1, y_max=y1, truncated=box.truncated or cut)


def box_iou(a: BBox, b: BBox) -> float:
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


SECTORS = ("right", "above-right", "above", "above-left", "left", "below-left", "below", "below-right")


def compass_sector(dx: float, dy: float) -> str:
    """8-way direction of the vector (dx, dy) in image coordinates."""
    if dx == 0 and dy == 0:
        return "center"
    angle = math.degrees(math.atan2(-dy, dx)) % 360.0
    return SECTORS[int(((angle + 22.5) % 360.0) // 45.0)]


@dataclass(frozen=True)
class RelationReport:
    direction: str
    sector: str
    iou: float
    center_offset: tuple[float, float]
    containment: str | None = None  # "a_in_b", "b_in_a", "mutual"

    def to_dict(self) -> dict[str, Any]:
        return {"direction": self.direction, "sector": self.sector, "iou": self.iou,
                "center_offset": list(self.center_offset), "containment": self.containment}


def _as_box(x) -> BBox | tuple[float, float]:
    if isinstance(x, BBox):
        return x
    vals = tuple(float(v) for v in x)
    if len(vals) == 2:
        return vals
    if len(vals) == 4:
        return BBox(*vals)
    raise InvalidBoxError(f"expected a point (x, y) or box (x0, y0, x1, y1), got {x!r}")


def _inside(pt, box: BBox) -> bool:
    return box.x_min <= pt[0] <= box.x_max and box.y_min <= pt[1] <= box.y_max


def bbox_relationship(a, b, frame_dims: tuple[float, float] | None = None) -> RelationReport:
    """Relative position of ``b`` with respect to ``a`` (boxes or points)."""
    a, b = _as_box(a), _as_box(b)
    if frame_dims is not None:
        fw, fh = frame_dims
        for g in (a, b):
            x0, y0, x1, y1 = g.coords if isinstance(g, BBox) else (*g, *g)
            if x0 < 0 or y0 < 0 or x1 > fw or y1 > fh:
                raise InvalidBoxError(f"geometry {g} outside frame {frame_dims}")
    ca = a.center if isinstance(a, BBox) else a
    cb = b.center if isinstance(b, BBox) else b
    dx, dy = cb[0] - ca[0], cb[1] - ca[1]
    sector = compass_sector(dx, dy)
    iou = 0.0
    containment = None
    if isinstance(a, BBox) and isinstance(b, BBox):
        iou = box_iou(a, b)
        a_in_b = b.x_min <= a.x_min and b.y_min <= a.y_min and a.x_max <= b.x_max and a.y_max <= b.y_max
        b_in_a = a.x_min <= b.x_min and a.y_min <= b.y_min and b.x_max <= a.x_max and b.y_max <= a.y_max
        containment = "mutual" if a_in_b and b_in_a else "a_in_b" if a_in_b else "b_in_a" if b_in_a else None
    elif isinstance(a, BBox):
        containment = "b_in_a" if _inside(b, a) else None
    elif isinstance(b, BBox):
        containment = "a_in_b" if _inside(a, b) else None
    elif a == b:
        containment = "mutual"
    if containment is not None:
        direction = "contained"
    elif iou > 0:
        direction = "overlapping"
    else:
        direction = sector
    return RelationReport(direction, sector, iou, (dx, dy), containment)


# --- masks -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise RasterError("mask must be 2-D")
        object.__setattr__(self, "bits", bits)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def centroid(self) -> tuple[float, float] | None:
        ys, xs = np.nonzero(self.bits)
        if xs.size == 0:
            return None
        # pixel centres
        return (float(xs.mean()) + 0.5, float(ys.mean()) + 0.5)

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)


@dataclass(frozen=True)
class MaskRelation:
    iou: float
    a_frac_in_b: float
    b_frac_in_a: float
    relation: str  # disjoint | overlap | a_contains_b | b_contains_a | equal | both-empty
    a_contains_b: bool
    b_contains_a: bool
    direction: str | None
    both_empty: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def mask_relationship(a: BinaryMask, b: BinaryMask) -> MaskRelation:
    if a.bits.shape != b.bits.shape:
        raise DimensionMismatchError(f"mask shapes differ: {a.bits.shape} vs {b.bits.shape}")
    na, nb = a.area, b.area
    inter = int(np.logical_and(a.bits, b.bits).sum())
    union = na + nb - inter
    iou = inter / union if union else 0.0
    a_in_b = inter / na if na else 0.0
    b_in_a = inter / nb if nb else 0.0
    # an empty mask is trivially a subset, but reporting that is misleading
    a_contains_b = nb > 0 and inter == nb
    b_contains_a = na > 0 and inter == na
    if union == 0:
        relation = "both-empty"
    elif a_contains_b and b_contains_a:
        relation = "equal"
    elif a_contains_b:
        relation = "a_contains_b"
    elif b_contains_a:
        relation = "b_contains_a"
    elif inter > 0:
        relation = "overlap"
    else:
        relation = "disjoint"
    ca, cb = a.centroid(), b.centroid()
    direction = compass_sector(cb[0] - ca[0], cb[1] - ca[1]) if ca and cb else None
    return MaskRelation(iou, a_in_b, b_in_a, relation, a_contains_b, b_contains_a, direction,
                        both_empty=union == 0)


def rasterize_boxes(boxes: Sequence[BBox], width: int, height: int) -> BinaryMask:
    """Foreground = pixels whose centre lies inside any box."""
    bits = np.zeros((height, width), dtype=bool)
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    for b in boxes:
        cols = (xs >= b.x_min) & (xs < b.x_max)
        rows = (ys >= b.y_min) & (ys < b.y_max)
        bits |= rows[:, None] & cols[None, :]
    return BinaryMask(bits)


def rasterize_polygon(points: Sequence[tuple[float, float]], width: int, height: int) -> BinaryMask:
    """Even-odd fill of a simple polygon, sampled at pixel centres."""
    pts = np.asarray(points, dtype=float)
    xs, ys = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    inside = np.zeros((height, width), dtype=bool)
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        if y0 == y1:
            continue
        crosses = (y0 > ys) != (y1 > ys)
        xint = x0 + (ys - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (xs < xint)
    return BinaryMask(inside)


# --- serialization -----------------------------------------------------------

_MAGIC = b"EOGR"
_HEADER = struct.Struct("<4sIII")


def write_patch(path: str | Path, pixels: np.ndarray) -> None:
    """Uncompressed format: magic, width, height, channels, then LE float32."""
    px = np.asarray(pixels, dtype="<f4")
    if px.ndim == 2:
        px = px[:, :, None]
    h, w, c = px.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, w, h, c))
        fh.write(np.ascontiguousarray(px).tobytes())


def read_patch(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, w, h, c = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise RasterError(f"{path}: not a raster patch file")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if body.size != w * h * c:
        raise RasterError(f"{path}: truncated pixel body")
    return body.reshape(h, w, c).astype(np.float32)


def write_pnm(path: str | Path, pixels: np.ndarray) -> None:
    """8-bit PGM (1 channel) or PPM (3 channels) for eyeballing."""
    px = np.asarray(pixels, dtype=np.float32)
    if px.ndim == 2:
        px = px[:, :, None]
    h, w, c = px.shape
    q = np.clip(np.round(px * 255.0), 0, 255).astype(np.uint8)
    tag = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(tag + f"\n{w} {h}\n255\n".encode())
        fh.write(q.tobytes())
