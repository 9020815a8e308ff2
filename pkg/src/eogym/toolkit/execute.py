"""Tool dispatch: validate arguments, run the tool, wrap the result.

Every failure becomes an error Observation; nothing raised here should end
an episode.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Any, Callable

from .. import datalake, raster, spectral
from ..raster import AOI, BBox, RasterError
from ..spectral import SpectralError
from . import calculator
from .detection import (
    Detection, boxes_observation, cross_modal_confirm, detect_unverified, detect_verified,
    select_objects, to_patch_frame,
)
from .context import EpisodeContext, ImageHandle
from .registry import TOOLS_BY_NAME, ToolSchema, canonical_name
from .types import ExecutionMode, Observation, ToolCall, ToolError, derive_seed

_Impl = Callable[[EpisodeContext, dict], Observation]
_IMPLS: dict[str, _Impl] = {}

# optical object tools that switch to the noisy backend in unverified mode
UNVERIFIED_CAPABLE = frozenset({
    "get_object_bbox_by_optical_image",
    "get_object_mask_by_optical_image",
    "get_building_mask_by_optical_image",
    "get_road_mask_by_optical_image",
})


def _tool(name):
    def deco(fn):
        _IMPLS[name] = fn
        return fn
    return deco


# --- argument validation ---------------------------------------------------

def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check(ptype: str, value) -> bool:
    if ptype in ("image_ref", "scene_ref", "mask_ref", "string", "expression"):
        return isinstance(value, str) and bool(value.strip())
    if ptype == "number":
        return _num(value)
    if ptype == "aoi":
        return isinstance(value, (list, tuple)) and len(value) == 4 and all(_num(v) for v in value)
    if ptype == "size":
        return isinstance(value, (list, tuple)) and len(value) == 2 and all(_num(v) and v > 0 for v in value)
    if ptype == "geometry":
        return isinstance(value, (list, tuple)) and len(value) in (2, 4) and all(_num(v) for v in value)
    if ptype == "box_list":
        return isinstance(value, (list, tuple)) and all(
            isinstance(b, (list, tuple)) and len(b) == 4 and all(_num(v) for v in b) for b in value)
    return False


def validate_arguments(schema: ToolSchema, args: dict) -> dict:
    known = {p.name: p for p in schema.params}
    extra = sorted(set(args) - set(known))
    if extra:
        raise ToolError("illegal-arguments", f"unexpected argument(s) {extra} for {schema.name}")
    for p in schema.params:
        if p.name not in args or args[p.name] is None:
            if p.required:
                raise ToolError("illegal-arguments", f"missing required argument {p.name!r}")
            continue
        if not _check(p.type, args[p.name]):
            raise ToolError("illegal-arguments", f"argument {p.name!r} is not a valid {p.type}")
    return args


def resolve_tool(name: str, ctx: EpisodeContext) -> ToolSchema:
    if ctx.exposed is not None and name not in ctx.exposed:
        raise ToolError("unknown-tool", f"tool {name!r} is not available")
    canon = canonical_name(name, ctx.mode.rename)
    schema = TOOLS_BY_NAME.get(canon)
    if schema is None:
        raise ToolError("unknown-tool", f"unknown tool {name!r}")
    return schema


def execute(call: ToolCall, ctx: EpisodeContext, mode: ExecutionMode | None = None) -> Observation:
    if mode is not None and mode != ctx.mode:
        ctx.mode = mode
    try:
        schema = resolve_tool(call.name, ctx)
        args = validate_arguments(schema, call.parsed_arguments())
        return _IMPLS[schema.name](ctx, args)
    except ToolError as exc:
        return Observation.error(exc.code, exc.message)
    except (RasterError, SpectralError) as exc:
        return Observation.error(getattr(exc, "code", "illegal-arguments"), str(exc))
    except datalake.NoTemporalGroupError as exc:
        return Observation.error("no-temporal-group", f"{exc} has no temporal sequence")
    except datalake.UnknownRecordError as exc:
        return Observation.error("unknown-image", f"unknown record {exc}")
    except Exception as exc:  # backend failure must not kill the episode
        return Observation.error("backend-failure", f"{type(exc).__name__}: {exc}")


# --- helpers -----------------------------------------------------------------

def _require_modality(h: ImageHandle, *allowed: str) -> None:
    if h.modality not in allowed:
        raise ToolError("modality-mismatch", f"expected {' or '.join(allowed)} image, got {h.modality}")


def _aoi(args) -> AOI:
    return AOI(*(float(v) for v in args["aoi"]))


def _image_obs(ctx: EpisodeContext, key: str) -> Observation:
    return Observation.ok("patch", ctx.describe_image(key))


def _record_obs(ctx: EpisodeContext, rec: datalake.DataLakeRecord | None, kind: str) -> Observation:
    if rec is None:
        return Observation.empty(kind, "no matching record")
    if rec.modality == "multispectral_scene":
        return Observation.ok("scene", _scene_payload(rec.record_id, ctx.scene(rec.record_id)))
    ctx.image(rec.record_id)
    return _image_obs(ctx, rec.record_id)


def _scene_payload(key: str, bs: spectral.BandSet) -> dict:
    h, w = bs.shape
    d = {"scene_id": key, "platform": bs.platform, "bands": sorted(bs.bands), "width": w, "height": h}
    if bs.capture_time is not None:
        d["capture_time"] = bs.capture_time.strftime("%Y-%m-%dT%H:%M:%SZ")
    if bs.gsd_m is not None:
        d["gsd_m"] = bs.gsd_m
    return d


def _listing(ctx: EpisodeContext, ref_record: str, key_name: str) -> Observation:
    group = datalake.temporal_list(ctx.index, ref_record)
    items = []
    for r in group:
        item = {key_name: r.record_id, "sensor": r.sensor}
        if r.capture_time is not None:
            item["capture_time"] = r.capture_time.strftime("%Y-%m-%dT%H:%M:%SZ")
        items.append(item)
    pos = [r.record_id for r in group].index(ref_record)
    return Observation.ok("records", {"count": len(items), "current_index": pos, "records": items})


def _scene_record(ctx: EpisodeContext, ref: str) -> str:
    if ref in ctx.scenes and ctx.scenes[ref].scene_id:
        return ctx.scenes[ref].scene_id
    ctx.scene(ref)
    return ref


def _noisy_seed(ctx: EpisodeContext, h: ImageHandle, target: str) -> int:
    return derive_seed(ctx.mode.seed, h.patch.root_id, target.strip().lower())


def _optical_detections(ctx: EpisodeContext, h: ImageHandle, target: str) -> Observation:
    ann = ctx.annotation_for(h)
    if ctx.mode.response == "unverified":
        return detect_unverified(ann, target, h.patch, _noisy_seed(ctx, h, target), ctx.detector)
    return detect_verified(ann, target, h.patch, ctx.target_filter)


def _mask_from_boxes(ctx: EpisodeContext, h: ImageHandle, target: str) -> Observation:
    obs = _optical_detections(ctx, h, target)
    if obs.status == "error":
        return obs
    boxes = [BBox(*b["bbox"]) for b in (obs.payload or {}).get("boxes", [])]
    mask = raster.rasterize_boxes(boxes, h.patch.width, h.patch.height)
    return _mask_obs(ctx, mask, target)


def _mask_obs(ctx: EpisodeContext, mask: raster.BinaryMask, what: str) -> Observation:
    if mask.area == 0:
        return Observation.empty("mask", f"empty {what} mask")
    key = ctx.add_mask(mask)
    total = mask.width * mask.height
    return Observation.ok("mask", {"mask_id": key, "target": what, "width": mask.width,
                                   "height": mask.height, "area_px": mask.area,
                                   "fraction": mask.area / total})


def _finite(x: float) -> float | None:
    return x if math.isfinite(x) else None


# --- spatial planning ----------------------------------------------------------

@_tool("crop_multispectral_image")
def _crop_ms(ctx, args):
    bs = ctx.scene(args["scene_id"]).crop(_aoi(args))
    key = ctx.add_scene(bs)
    return Observation.ok("scene", _scene_payload(key, bs))


@_tool("crop_optical_or_sar_image")
def _crop_image(ctx, args):
    h = ctx.image(args["image_id"])
    patch = raster.crop_aoi(h.patch, _aoi(args))
    return _image_obs(ctx, ctx.add_image(patch, h.modality, h.record_id))


def _pan_tool(direction):
    def impl(ctx, args):
        h = ctx.image(args["image_id"])
        step = float(args.get("step_frac", 0.5))
        if not 0 < step <= 1:
            raise ToolError("illegal-arguments", "step_frac must be in (0, 1]")
        patch = raster.pan(h.patch, direction, step)
        return _image_obs(ctx, ctx.add_image(patch, h.modality, h.record_id))
    return impl


for _d in ("up", "down", "left", "right"):
    _IMPLS[f"move_{_d}_optical_image"] = _pan_tool(_d)


@_tool("zoom_out_optical_image")
def _zoom(ctx, args):
    h = ctx.image(args["image_id"])
    factor = float(args.get("factor", 2.0))
    if not factor > 1:
        raise ToolError("illegal-arguments", "factor must be > 1")
    patch = raster.zoom_out(h.patch, factor)
    return _image_obs(ctx, ctx.add_image(patch, h.modality, h.record_id))


# --- temporal fetching -----------------------------------------------------------

@_tool("get_multispectral_list")
def _ms_list(ctx, args):
    return _listing(ctx, _scene_record(ctx, args["scene_id"]), "scene_id")


@_tool("get_next_multispectral")
def _ms_next(ctx, args):
    rid = _scene_record(ctx, args["scene_id"])
    return _record_obs(ctx, datalake.temporal_neighbor(ctx.index, rid, "next"), "scene")


@_tool("get_previous_multispectral")
def _ms_prev(ctx, args):
    rid = _scene_record(ctx, args["scene_id"])
    return _record_obs(ctx, datalake.temporal_neighbor(ctx.index, rid, "previous"), "scene")


@_tool("get_optical_image_list")
def _opt_list(ctx, args):
    h = ctx.image(args["image_id"])
    _require_modality(h, "optical_rgb")
    return _listing(ctx, h.record_id, "image_id")


@_tool("get_next_optical_image")
def _opt_next(ctx, args):
    h = ctx.image(args["image_id"])
    _require_modality(h, "optical_rgb")
    return _record_obs(ctx, datalake.temporal_neighbor(ctx.index, h.record_id, "next"), "patch")


@_tool("get_previous_optical_image")
def _opt_prev(ctx, args):
    h = ctx.image(args["image_id"])
    _require_modality(h, "optical_rgb")
    return _record_obs(ctx, datalake.temporal_neighbor(ctx.index, h.record_id, "previous"), "patch")


# --- cross-modal switching -------------------------------------------------------

@_tool("get_optical_from_sar")
def _opt_from_sar(ctx, args):
    h = ctx.image(args["image_id"])
    _require_modality(h, "sar")
    return _record_obs(ctx, datalake.companion(ctx.index, h.record_id), "patch")


@_tool("get_sar_from_optical")
def _sar_from_opt(ctx, args):
    h = ctx.image(args["image_id"])
    _require_modality(h, "optical_rgb")
    return _record_obs(ctx, datalake.companion(ctx.index, h.record_id), "patch")


# --- semantic --------------------------------------------------------------------

def _visible(ctx, h: ImageHandle, target="all") -> list[Detection]:
    ann = ctx.annotation_for(h)
    if ann is None:
        raise ToolError("no-ground-truth", f"no annotation for {h.record_id}")
    return to_patch_frame(select_objects(ann, target, ctx.target_filter), h.patch)


@_tool("analyze_optical_scene")
def _analyze(ctx, args):
    h = ctx.image(args["image_id"])
    _require_modality(h, "optical_rgb")
    ann = ctx.annotation_for(h)
    counts = Counter(d.box.label for d in _visible(ctx, h))
    cats = ", ".join(f"{lab} ({n})" for lab, n in sorted(counts.items())) or "none"
    scene = ann.scene or "unclassified"
    return Observation.ok("text", {"scene": scene, "categories": dict(sorted(counts.items())),
                                   "text": f"Scene type: {scene}. Visible categories: {cats}."})


@_tool("describe_optical_object")
def _describe(ctx, args):
    h = ctx.image(args["image_id"])
    _require_modality(h, "optical_rgb")
    dets = _visible(ctx, h, args["target"])
    if not dets:
        return Observation.empty("text", f"no '{args['target']}' visible")
    parts, objs = [], []
    for d in dets:
        attrs = {k: v for k, v in sorted(d.attributes.items())}
        objs.append({"label": d.box.label, "attributes": attrs})
        desc = ", ".join(f"{k}={v}" for k, v in attrs.items()) or "no notable attributes"
        parts.append(f"{d.box.label}: {desc}")
    return Observation.ok("text", {"objects": objs, "text": "; ".join(parts)})


# --- detection -------------------------------------------------------------------

@_tool("get_object_bbox_by_optical_image")
def _bbox_optical(ctx, args):
    h = ctx.image(args["image_id"])
    _require_modality(h, "optical_rgb")
    return _optical_detections(ctx, h, args["target"])


@_tool("get_object_bbox_by_sar_image")
def _bbox_sar(ctx, args):
    # SAR detection has no raw backend; always ground-truth backed
    h = ctx.image(args["image_id"])
    _require_modality(h, "sar")
    return detect_verified(ctx.annotation_for(h), args["target"], h.patch, ctx.target_filter)


@_tool("get_object_bbox_by_optical_sar_image")
def _bbox_pair(ctx, args):
    opt = ctx.image(args["optical_image_id"])
    sar = ctx.image(args["sar_image_id"])
    _require_modality(opt, "optical_rgb")
    _require_modality(sar, "sar")
    a_opt, a_sar = ctx.annotation_for(opt), ctx.annotation_for(sar)
    if a_opt is None or a_sar is None:
        return Observation.error("no-ground-truth", "both images of the pair need annotations")
    target = args["target"]
    d_opt = to_patch_frame(select_objects(a_opt, target, ctx.target_filter), opt.patch)
    d_sar = to_patch_frame(select_objects(a_sar, target, ctx.target_filter), sar.patch)
    kept = cross_modal_confirm(d_opt, d_sar, ctx.cross_modal_iou)
    return boxes_observation(kept, target, opt.patch, iou_threshold=ctx.cross_modal_iou)


# --- masking ---------------------------------------------------------------------

@_tool("get_building_mask_by_optical_image")
def _building_mask(ctx, args):
    h = ctx.image(args["image_id"])
    _require_modality(h, "optical_rgb")
    return _mask_from_boxes(ctx, h, "building")


@_tool("get_road_mask_by_optical_image")
def _road_mask(ctx, args):
    h = ctx.image(args["image_id"])
    _require_modality(h, "optical_rgb")
    return _mask_from_boxes(ctx, h, "road")


@_tool("get_object_mask_by_optical_image")
def _object_mask(ctx, args):
    h = ctx.image(args["image_id"])
    _require_modality(h, "optical_rgb")
    return _mask_from_boxes(ctx, h, args["target"])


def _theme_mask_tool(theme):
    def impl(ctx, args):
        bs = ctx.scene(args["scene_id"])
        mask = spectral.thematic_mask(bs, theme, args.get("threshold"))
        return _mask_obs(ctx, mask, theme)
    return impl


for _theme in ("urban", "vegetation", "water"):
    _IMPLS[f"compute_{_theme}_mask_by_multispectral"] = _theme_mask_tool(_theme)


# --- spectral ----------------------------------------------------------------------

def _index_tool(index):
    def impl(ctx, args):
        bs = ctx.scene(args["scene_id"])
        res = spectral.compute_index(bs, index, args.get("threshold"))
        stats = res.stats()
        stats["mean"], stats["median"] = _finite(res.mean), _finite(res.median)
        stats["scene_id"] = args["scene_id"]
        if res.valid_pixels == 0:
            return Observation.empty("index_stats", f"no valid {index.upper()} pixels")
        return Observation.ok("index_stats", stats)
    return impl


for _idx in ("ndbi", "ndsi", "ndvi", "ndwi"):
    _IMPLS[f"compute_{_idx}_by_multispectral"] = _index_tool(_idx)


@_tool("theme_index_lookup")
def _theme_lookup(ctx, args):
    try:
        return Observation.ok("text", spectral.theme_index_lookup(args["theme"]))
    except spectral.UnknownThemeError as exc:
        raise ToolError("unknown-theme", str(exc).strip("'\"")) from None


# --- relationship and measurement ---------------------------------------------------

@_tool("get_bbox_geospatial_relationship")
def _bbox_rel(ctx, args):
    rep = raster.bbox_relationship(args["a"], args["b"])
    return Observation.ok("relation", rep.to_dict())


@_tool("get_mask_geospatial_relationship")
def _mask_rel(ctx, args):
    rep = raster.mask_relationship(ctx.mask(args["mask_a"]), ctx.mask(args["mask_b"]))
    return Observation.ok("relation", rep.to_dict())


@_tool("normalize_bounding_boxes")
def _normalize(ctx, args):
    boxes = [BBox(*b) for b in args["boxes"]]
    out = raster.normalize_bboxes(boxes, tuple(args["from_size"]), tuple(args["to_size"]))
    return Observation.ok("boxes", {"boxes": [list(b.coords) for b in out], "image_size": list(args["to_size"]),
                                    "count": len(out)})


@_tool("basic_calculator")
def _calc(ctx, args):
    try:
        value = calculator.evaluate(args["expression"])
    except calculator.CalculatorError as exc:
        raise ToolError("illegal-arguments", str(exc)) from None
    return Observation.ok("scalar", {"value": value, "text": calculator.format_number(value)})


assert set(_IMPLS) == set(TOOLS_BY_NAME), sorted(set(TOOLS_BY_NAME) ^ set(_IMPLS))


def execute_all(calls, ctx: EpisodeContext) -> list[Observation]:
    return [execute(c, ctx) for c in calls]


__all__ = ["execute", "validate_arguments", "resolve_tool", "UNVERIFIED_CAPABLE", "execute_all"]
