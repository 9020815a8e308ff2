"""The 35-tool catalog, dataset-mapped subsets and the renaming protocol."""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Iterable

GATHERING_GROUPS = ("spatial_planning", "temporal_fetching", "crossmodal_switching")
ANALYSIS_GROUPS = ("semantic", "detection", "masking", "spectral", "relation_measure")


@dataclass(frozen=True)
class Param:
    name: str
    type: str  # image_ref | scene_ref | mask_ref | aoi | number | string | geometry | box_list | size | expression
    required: bool = True
    description: str = ""


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str
    params: tuple[Param, ...]
    group: str
    renamed_flag: bool = False  # set when renaming left the first token untouched

    def to_function(self) -> dict:
        """Chat-tool style function declaration."""
        props = {p.name: _JSON_TYPES[p.type] | {"description": p.description or p.type}
                 for p in self.params}
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": props,
                    "required": [p.name for p in self.params if p.required],
                    "additionalProperties": False,
                },
            },
        }


_JSON_TYPES = {
    "image_ref": {"type": "string"},
    "scene_ref": {"type": "string"},
    "mask_ref": {"type": "string"},
    "string": {"type": "string"},
    "expression": {"type": "string"},
    "number": {"type": "number"},
    "aoi": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
    "size": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
    "geometry": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 4},
    "box_list": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
}

_IMG = Param("image_id", "image_ref", description="Image or crop identifier")
_SCENE = Param("scene_id", "scene_ref", description="Multispectral folder identifier")
_AOI = Param("aoi", "aoi", description="Normalized [x0, y0, x1, y1] window")
_TARGET = Param("target", "string", description="Object category to look for")
_THRESH = Param("threshold", "number", required=False, description="Index threshold override")


def _t(name, group, description, *params):
    return ToolSchema(name, description, tuple(params), group)


TOOLS: tuple[ToolSchema, ...] = (
    # spatial planning
    _t("crop_multispectral_image", "spatial_planning",
       "Crop every band of a multispectral folder to a normalized AOI.", _SCENE, _AOI),
    _t("crop_optical_or_sar_image", "spatial_planning",
       "Crop an optical or SAR image to a normalized AOI.", _IMG, _AOI),
    _t("move_down_optical_image", "spatial_planning",
       "Shift the current crop downward, keeping its size.", _IMG,
       Param("step_frac", "number", required=False, description="Shift as a fraction of crop height")),
    _t("move_left_optical_image", "spatial_planning",
       "Shift the current crop left, keeping its size.", _IMG,
       Param("step_frac", "number", required=False, description="Shift as a fraction of crop width")),
    _t("move_right_optical_image", "spatial_planning",
       "Shift the current crop right, keeping its size.", _IMG,
       Param("step_frac", "number", required=False, description="Shift as a fraction of crop width")),
    _t("move_up_optical_image", "spatial_planning",
       "Shift the current crop upward, keeping its size.", _IMG,
       Param("step_frac", "number", required=False, description="Shift as a fraction of crop height")),
    _t("zoom_out_optical_image", "spatial_planning",
       "Expand the visible area around a cropped image.", _IMG,
       Param("factor", "number", required=False, description="Growth factor (> 1), default 2")),
    # temporal fetching
    _t("get_multispectral_list", "temporal_fetching",
       "List multispectral captures for the same location, oldest first.", _SCENE),
    _t("get_next_multispectral", "temporal_fetching",
       "Next multispectral folder after the reference capture.", _SCENE),
    _t("get_next_optical_image", "temporal_fetching",
       "Closest later RGB frame of the same sequence.", _IMG),
    _t("get_optical_image_list", "temporal_fetching",
       "List RGB frames of the same sequence ordered by time.", _IMG),
    _t("get_previous_multispectral", "temporal_fetching",
       "Most recent multispectral folder before the reference capture.", _SCENE),
    _t("get_previous_optical_image", "temporal_fetching",
       "Closest earlier RGB frame of the same sequence.", _IMG),
    # cross-modal switching
    _t("get_optical_from_sar", "crossmodal_switching",
       "Aligned optical companion of a SAR image.", _IMG),
    _t("get_sar_from_optical", "crossmodal_switching",
       "Aligned SAR companion of an optical image.", _IMG),
    # semantic understanding
    _t("analyze_optical_scene", "semantic",
       "Summarize or classify the scene in an optical image. Not for counting.", _IMG),
    _t("describe_optical_object", "semantic",
       "Describe visible attributes (e.g. colour) of a target object.", _IMG, _TARGET),
    # detection
    _t("get_object_bbox_by_optical_image", "detection",
       "Detect target objects in an optical image; returns boxes.", _IMG, _TARGET),
    _t("get_object_bbox_by_sar_image", "detection",
       "Detect target objects in a SAR image; returns boxes.", _IMG, _TARGET),
    _t("get_object_bbox_by_optical_sar_image", "detection",
       "Select boxes confirmed by both images of an aligned optical/SAR pair.",
       Param("optical_image_id", "image_ref", description="Optical image identifier"),
       Param("sar_image_id", "image_ref", description="SAR image identifier"), _TARGET),
    # masking
    _t("get_building_mask_by_optical_image", "masking",
       "Building footprint mask from an optical image.", _IMG),
    _t("get_road_mask_by_optical_image", "masking",
       "Road mask from an optical image.", _IMG),
    _t("get_object_mask_by_optical_image", "masking",
       "Binary mask of target objects in an optical image.", _IMG, _TARGET),
    _t("compute_urban_mask_by_multispectral", "masking",
       "Urban / built-up mask from an NDBI threshold.", _SCENE, _THRESH),
    _t("compute_vegetation_mask_by_multispectral", "masking",
       "Vegetation mask from an NDVI threshold.", _SCENE, _THRESH),
    _t("compute_water_mask_by_multispectral", "masking",
       "Water mask from an NDWI threshold.", _SCENE, _THRESH),
    # spectral analysis
    _t("compute_ndbi_by_multispectral", "spectral", "NDBI statistics of a multispectral capture.", _SCENE, _THRESH),
    _t("compute_ndsi_by_multispectral", "spectral", "NDSI statistics of a multispectral capture.", _SCENE, _THRESH),
    _t("compute_ndvi_by_multispectral", "spectral", "NDVI statistics of a multispectral capture.", _SCENE, _THRESH),
    _t("compute_ndwi_by_multispectral", "spectral", "NDWI statistics of a multispectral capture.", _SCENE, _THRESH),
    _t("theme_index_lookup", "spectral",
       "Index expression and bands for a theme (vegetation, water, urban, snow).",
       Param("theme", "string", description="Theme name")),
    # relationship and measurement
    _t("get_bbox_geospatial_relationship", "relation_measure",
       "Coarse relative position between two points or boxes.",
       Param("a", "geometry", description="Point [x, y] or box [x0, y0, x1, y1]"),
       Param("b", "geometry", description="Point [x, y] or box [x0, y0, x1, y1]")),
    _t("get_mask_geospatial_relationship", "relation_measure",
       "Overlap, containment and relative position of two masks.",
       Param("mask_a", "mask_ref", description="First mask identifier"),
       Param("mask_b", "mask_ref", description="Second mask identifier")),
    _t("normalize_bounding_boxes", "relation_measure",
       "Rescale boxes to a shared image size.",
       Param("boxes", "box_list", description="List of [x0, y0, x1, y1]"),
       Param("from_size", "size", description="Source [width, height]"),
       Param("to_size", "size", description="Target [width, height]")),
    _t("basic_calculator", "relation_measure",
       "Evaluate a simple arithmetic expression.",
       Param("expression", "expression", description="Arithmetic expression, e.g. (3+5)/2")),
)

TOOLS_BY_NAME = {t.name: t for t in TOOLS}

_REL = ("get_bbox_geospatial_relationship", "get_mask_geospatial_relationship")
_OPT_DETECT = ("get_object_bbox_by_optical_image", "get_object_mask_by_optical_image")

SKILL_TOOLS: dict[str, tuple[str, ...]] = {
    "multispectral": (
        "get_multispectral_list", "get_previous_multispectral", "get_next_multispectral",
        "crop_multispectral_image", "compute_ndvi_by_multispectral", "compute_ndwi_by_multispectral",
        "compute_ndbi_by_multispectral", "compute_ndsi_by_multispectral",
        "compute_water_mask_by_multispectral", "compute_vegetation_mask_by_multispectral",
        "compute_urban_mask_by_multispectral", *_REL, "basic_calculator", "theme_index_lookup",
    ),
    "fmow": (
        "get_optical_image_list", "get_previous_optical_image", "get_next_optical_image",
        "crop_optical_or_sar_image", *_OPT_DETECT, "get_road_mask_by_optical_image",
        "get_building_mask_by_optical_image", *_REL, "basic_calculator", "normalize_bounding_boxes",
    ),
    "fair1m": (
        "crop_optical_or_sar_image", "zoom_out_optical_image", "move_up_optical_image",
        "move_down_optical_image", "move_left_optical_image", "move_right_optical_image",
        "basic_calculator", "get_object_bbox_by_optical_image", *_REL, "get_object_mask_by_optical_image",
    ),
    "xbd": (
        "crop_optical_or_sar_image", "get_object_bbox_by_optical_image", "get_object_mask_by_optical_image",
        "get_building_mask_by_optical_image", *_REL, "basic_calculator", "analyze_optical_scene",
        "describe_optical_object",
    ),
    "m4sar": (
        "get_object_bbox_by_optical_sar_image", "get_optical_from_sar", "get_sar_from_optical",
        "crop_optical_or_sar_image", *_REL, "basic_calculator",
    ),
    "sardet100k": (
        "crop_optical_or_sar_image", "get_object_bbox_by_sar_image", "get_bbox_geospatial_relationship",
        "basic_calculator", "get_mask_geospatial_relationship",
    ),
}
for _fam in ("dior", "dota", "xview"):
    SKILL_TOOLS[_fam] = (
        "crop_optical_or_sar_image", *_OPT_DETECT, "get_road_mask_by_optical_image",
        "get_building_mask_by_optical_image", *_REL, "basic_calculator", "analyze_optical_scene",
        "describe_optical_object",
    )

DATASET_FAMILIES = tuple(SKILL_TOOLS)

RENAME_RULES = {
    "get": "access",
    "compute": "derive",
    "analyze": "inspect",
    "describe": "characterize",
    "crop": "clip",
    "move": "shift",
    "zoom": "widen",
    "normalize": "standardize",
    "theme": "topic",
    "basic": "simple",
}
_INVERSE_RULES = {v: k for k, v in RENAME_RULES.items()}


class UnknownFamilyError(KeyError):
    pass


def normalize_family(family: str) -> str:
    key = re.sub(r"[^a-z0-9]", "", family.lower())
    aliases = {"m4sar": "m4sar", "sardet100k": "sardet100k", "sardet": "sardet100k",
               "landsat": "multispectral", "sentinel2": "multispectral", "gee": "multispectral",
               "geemultispectral": "multispectral"}
    key = aliases.get(key, key)
    if key not in SKILL_TOOLS:
        raise UnknownFamilyError(f"unknown dataset family {family!r}; known: {list(DATASET_FAMILIES)}")
    return key


def rename_tool_name(name: str) -> tuple[str, bool]:
    """Swap the first underscore token; returns (new_name, was_mapped)."""
    head, _, rest = name.partition("_")
    if head in RENAME_RULES:
        return (RENAME_RULES[head] + ("_" + rest if rest else ""), True)
    return (name, False)


def inverse_tool_name(name: str) -> str:
    head, _, rest = name.partition("_")
    if head in _INVERSE_RULES:
        return _INVERSE_RULES[head] + ("_" + rest if rest else "")
    return name


def rename_schema(schema: ToolSchema) -> ToolSchema:
    new, mapped = rename_tool_name(schema.name)
    return replace(schema, name=new, renamed_flag=not mapped)


def canonical_name(name: str, rename: bool) -> str:
    """Backend name for a model-facing name."""
    return inverse_tool_name(name) if rename else name


def schema_set(dataset_family: str, mode: str = "skill", rename: bool = False) -> list[ToolSchema]:
    if mode not in ("skill", "all"):
        raise ValueError(f"schema mode must be 'skill' or 'all', got {mode!r}")
    family = normalize_family(dataset_family)
    if mode == "all":
        schemas = list(TOOLS)
    else:
        names = SKILL_TOOLS[family]
        schemas = [TOOLS_BY_NAME[n] for n in names]
    if rename:
        schemas = [rename_schema(s) for s in schemas]
    return schemas


def function_manifest(schemas: Iterable[ToolSchema]) -> list[dict]:
    return [s.to_function() for s in schemas]
