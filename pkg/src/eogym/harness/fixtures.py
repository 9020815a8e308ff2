"""Seeded synthetic corpus with planted geometry and tasks.

Objects are flat-coloured rectangles inside a 16-pixel cell grid, so every
crop, pan and zoom window used by a task either fully contains an object or
misses it. Reference answers are computed here from the planted layout, not
by calling the tools.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import asdict, dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from ..datalake import DataLakeRecord, GeoPoint, write_manifest
from ..episode import Task, format_value, write_tasks
from ..raster import BBox, write_patch
from ..spectral import BandSet, save_bandset
from ..toolkit.detection import AnnotatedObject, GroundTruthAnnotation, write_annotations

CELL = 16

COLORS = {
    "building": (0.75, 0.45, 0.35), "road": (0.35, 0.35, 0.35), "car": (0.9, 0.1, 0.1), "truck": (0.9, 0.6, 0.1),
    "van": (0.95, 0.95, 0.2), "plane": (0.95, 0.95, 0.95), "ship": (0.6, 0.7, 0.9), "storage tank": (1.0, 1.0, 1.0),
}

# per-pixel reflectance of each land-cover class in the scene band plan
REFLECTANCE = {
    "water": {"B2": 0.08, "B3": 0.10, "B4": 0.05, "B8": 0.02, "B11": 0.01},
    "vegetation": {"B2": 0.05, "B3": 0.08, "B4": 0.04, "B8": 0.40, "B11": 0.20},
    "urban": {"B2": 0.10, "B3": 0.12, "B4": 0.15, "B8": 0.20, "B11": 0.30},
}


@dataclass(frozen=True)
class FixtureSpec:
    seed: int = 7
    image_size: int = 128
    scene_size: int = 32
    sequence_length: int = 4
    scene_count: int = 5
    pair_count: int = 2
    water_rows: int = 8
    vegetation_columns: tuple[int, ...] = (12, 16, 20, 24, 18)
    building_counts: tuple[int, ...] = (3, 4, 5, 6)
    object_vocabulary: tuple[str, ...] = ("building", "car", "truck", "van", "plane", "ship", "storage tank")
    scene_bands: tuple[str, ...] = ("B2", "B3", "B4", "B8", "B11")

    def __post_init__(self):
        if self.image_size % (4 * CELL):
            raise ValueError("image_size must be a multiple of 64")
        if len(self.vegetation_columns) != self.scene_count or len(self.building_counts) != self.sequence_length:
            raise ValueError("per-capture plans must match the capture counts")

    def to_dict(self) -> dict:
        return asdict(self)


class _Canvas:
    """An image plus the objects planted on it, one object per grid cell."""

    def __init__(self, rng: np.random.Generator, size: int, channels: int = 3, shade: float = 0.25):
        self.rng = rng
        self.size = size
        self.pixels = np.full((size, size, channels), shade, dtype=np.float32)
        self.pixels += rng.uniform(-0.02, 0.02, size=self.pixels.shape).astype(np.float32)
        self.free = {(cx, cy) for cx in range(size // CELL) for cy in range(size // CELL)}
        self.objects: list[AnnotatedObject] = []

    def put(self, label: str, cell: tuple[int, int], attributes=None, inset: int | None = None) -> BBox:
        if cell not in self.free:
            raise ValueError(f"cell {cell} already used")
        self.free.discard(cell)
        m = int(self.rng.integers(2, 5)) if inset is None else inset
        x0, y0 = cell[0] * CELL + m, cell[1] * CELL + m
        box = BBox(float(x0), float(y0), float(cell[0] * CELL + CELL - m), float(cell[1] * CELL + CELL - m), label)
        self.paint(box, label)
        self.objects.append(AnnotatedObject(label, box, attributes=dict(attributes or {})))
        return box

    def paint(self, box: BBox, label: str) -> None:
        color = np.asarray(COLORS.get(label, (0.5, 0.5, 0.5)), dtype=np.float32)[: self.pixels.shape[2]]
        self.pixels[int(box.y_min):int(box.y_max), int(box.x_min):int(box.x_max)] = color

    def scatter(self, label: str, n: int, region=None, attributes=None) -> list[BBox]:
        """Place ``n`` objects in free cells, optionally restricted to a cell-index predicate."""
        cells = sorted(c for c in self.free if region is None or region(c))
        if len(cells) < n:
            raise ValueError(f"not enough free cells for {n} {label}")
        picks = self.rng.choice(len(cells), size=n, replace=False)
        return [self.put(label, cells[int(i)], attributes) for i in sorted(picks)]

    def annotation(self, record_id: str, scene: str | None = None) -> GroundTruthAnnotation:
        return GroundTruthAnnotation(record_id, self.size, self.size, tuple(self.objects), scene)


def _count(objs, label, x_range=None, y_range=None) -> int:
    n = 0
    for o in objs:
        if o.label != label:
            continue
        b = o.box
        if x_range and not (x_range[0] <= b.x_min and b.x_max <= x_range[1]):
            continue
        if y_range and not (y_range[0] <= b.y_min and b.y_max <= y_range[1]):
            continue
        n += 1
    return n


def _call(name, **arguments) -> dict:
    return {"name": name, "arguments": arguments}


def _task(task_id, question, start, family, eo_task, calls, rule, answer=None, deferred=False) -> Task:
    return Task(task_id, question, tuple(start), family, eo_task, tuple(c["name"] for c in calls), tuple(calls),
                rule, None if deferred else str(answer), deferred)


def _value(path):
    return {"op": "value", "path": path}


def gen_fixtures(spec: FixtureSpec, out_dir: str | Path) -> dict:
    """Write manifest, rasters, annotations and tasks under ``out_dir``.

    Returns a summary with paths and counts. Output bytes depend only on ``spec``.
    """
    out = Path(out_dir)
    for sub in ("images", "scenes"):
        if (out / sub).exists():
            shutil.rmtree(out / sub)
        (out / sub).mkdir(parents=True)
    rng = np.random.default_rng(spec.seed)
    S = spec.image_size
    half, quarter = S // 2, S // 4
    records: list[DataLakeRecord] = []
    annotations: list[GroundTruthAnnotation] = []
    tasks: list[Task] = []
    t0 = datetime(2021, 1, 15, 10, 30, tzinfo=timezone.utc)

    def save_image(rid, pixels, modality="optical_rgb", **kw):
        rel = f"images/{rid}.eog"
        write_patch(out / rel, pixels)
        records.append(DataLakeRecord(rid, modality, rel, **kw))

    n_cells = S // CELL

    # --- fmow: dated sequence with growing building counts -------------------------
    fmow_loc = GeoPoint(34.0522, -118.2437)
    fmow_ids = [f"fmow_f{i}" for i in range(spec.sequence_length)]
    fmow_objs = {}
    for i, rid in enumerate(fmow_ids):
        cv = _Canvas(rng, S)
        for cx in range(n_cells):  # a road along the third row of cells
            cv.put("road", (cx, 2), inset=4)
        cv.scatter("building", spec.building_counts[i], region=lambda c: c[1] >= 4)
        cv.scatter("car", i + 1, region=lambda c: c[1] in (0, 1))
        save_image(rid, cv.pixels, sensor="worldview", location=fmow_loc, capture_time=t0 + timedelta(days=365 * i),
                   gsd_m=0.5, sequence_id="fmow_seq", frame_index=i)
        annotations.append(cv.annotation(rid, "construction site"))
        fmow_objs[rid] = cv.objects
    f1, f2, f3 = fmow_ids[1], fmow_ids[2], fmow_ids[-1]
    tasks += [
        _task("fmow_next_buildings", "How many buildings are visible in the capture that follows this one?",
              [f1], "fmow", "temporal_reasoning",
              [_call("get_next_optical_image", image_id=f1),
               _call("get_object_bbox_by_optical_image", image_id="$0.image_id", target="building")],
              _value("$1.count"), _count(fmow_objs[f2], "building")),
        _task("fmow_sequence_length", "How many dated captures exist for this site?", [fmow_ids[0]], "fmow",
              "temporal_reasoning", [_call("get_optical_image_list", image_id=fmow_ids[0])],
              _value("$0.count"), spec.sequence_length),
        _task("fmow_car_count", "How many cars are in the image?", [f3], "fmow", "object_counting",
              [_call("get_object_bbox_by_optical_image", image_id=f3, target="car")],
              _value("$0.count"), _count(fmow_objs[f3], "car")),
        # buildings sit in cell rows >= 4, the road in row 2, so the masks never touch
        _task("fmow_building_road_overlap", "Do the building footprints overlap the road?",
              [fmow_ids[0]], "fmow", "geospatial_reasoning",
              [_call("get_building_mask_by_optical_image", image_id=fmow_ids[0]),
               _call("get_road_mask_by_optical_image", image_id=fmow_ids[0]),
               _call("get_mask_geospatial_relationship", mask_a="$0.mask_id", mask_b="$1.mask_id")],
              _value("$2.relation"), "disjoint"),
        _task("fmow_previous_cars", "How many cars were present in the previous capture?", [f3], "fmow",
              "temporal_reasoning",
              [_call("get_previous_optical_image", image_id=f3),
               _call("get_object_bbox_by_optical_image", image_id="$0.image_id", target="car")],
              _value("$1.count"), _count(fmow_objs[fmow_ids[-2]], "car")),
    ]

    # --- multispectral: half-plane land cover through time ------------------------------
    ms_loc = GeoPoint(-3.4653, -62.2159)
    n = spec.scene_size
    ms_ids = [f"s2_t{i}" for i in range(spec.scene_count)]
    for i, rid in enumerate(ms_ids):
        cover = np.full((n, n), "urban", dtype=object)
        cover[: spec.water_rows, :] = "water"
        cover[spec.water_rows:, : spec.vegetation_columns[i]] = "vegetation"
        bands = {b: np.vectorize(lambda c, b=b: REFLECTANCE[c][b], otypes=[np.float32])(cover)
                 for b in spec.scene_bands}
        when = t0 + timedelta(days=30 * i)
        folder = f"scenes/{rid}"
        save_bandset(BandSet("sentinel2a", bands, when, 10.0, rid), out / folder)
        records.append(DataLakeRecord(rid, "multispectral_scene", folder, sensor="sentinel2a", location=ms_loc,
                                      capture_time=when, gsd_m=10.0,
                                      band_files=tuple((b, f"{folder}/{b}.eog") for b in sorted(spec.scene_bands))))
    vc = spec.vegetation_columns
    veg_rows = n - spec.water_rows
    east_veg = max(0, vc[2] - n // 2) * veg_rows / ((n // 2) * n)
    tasks += [
        _task("s2_vegetation_change", "Compared with the previous capture, did vegetation increase or decrease?",
              [ms_ids[3]], "multispectral", "temporal_reasoning",
              [_call("get_previous_multispectral", scene_id=ms_ids[3]),
               _call("compute_ndvi_by_multispectral", scene_id=ms_ids[3]),
               _call("compute_ndvi_by_multispectral", scene_id="$0.scene_id")],
              {"op": "compare", "a": "$2.mean", "b": "$1.mean", "labels": ["decreased", "unchanged", "increased"]},
              deferred=True),
        _task("s2_capture_count", "How many multispectral captures are available for this location?", [ms_ids[0]],
              "multispectral", "temporal_reasoning", [_call("get_multispectral_list", scene_id=ms_ids[0])],
              _value("$0.count"), spec.scene_count),
        _task("s2_water_fraction", "What fraction of the scene is covered by water?", [ms_ids[1]], "multispectral",
              "geospatial_reasoning", [_call("compute_water_mask_by_multispectral", scene_id=ms_ids[1])],
              _value("$0.fraction"), format_value(spec.water_rows / n)),
        _task("s2_east_vegetation", "What fraction of the eastern half of the scene is vegetated?", [ms_ids[2]],
              "multispectral", "geospatial_reasoning",
              [_call("crop_multispectral_image", scene_id=ms_ids[2], aoi=[0.5, 0.0, 1.0, 1.0]),
               _call("compute_vegetation_mask_by_multispectral", scene_id="$0.scene_id")],
              _value("$1.fraction"), format_value(east_veg)),
        _task("s2_next_ndvi_median", "What is the median NDVI of the next capture?", [ms_ids[1]], "multispectral",
              "temporal_reasoning",
              [_call("get_next_multispectral", scene_id=ms_ids[1]),
               _call("compute_ndvi_by_multispectral", scene_id="$0.scene_id")],
              _value("$1.median"), deferred=True),
    ]

    # --- fair1m: base image plus an off-centre crop record --------------------------------
    cv = _Canvas(rng, S)
    cv.scatter("plane", 6, region=lambda c: 2 <= c[0] < 6 and 2 <= c[1] < 6)
    cv.scatter("plane", 3, region=lambda c: c[1] >= 6)
    cv.scatter("ship", 4, region=lambda c: c[0] >= 6)
    cv.scatter("ship", 2, region=lambda c: c[0] < 2)
    save_image("fair_base", cv.pixels, sensor="gaofen", location=GeoPoint(31.23, 121.47), gsd_m=0.8)
    annotations.append(cv.annotation("fair_base", "airport"))
    win = (quarter, quarter, quarter + half, quarter + half)  # crop window x0, y0, x1, y1
    crop_rel = "images/fair_crop.eog"
    write_patch(out / crop_rel, cv.pixels[win[1]:win[3], win[0]:win[2]])
    records.append(DataLakeRecord("fair_crop", "optical_rgb", crop_rel, sensor="gaofen",
                                  location=GeoPoint(31.23, 121.47), gsd_m=0.8, base_image_id="fair_base",
                                  base_offset=(quarter, quarter)))
    fo = cv.objects
    tasks += [
        _task("fair_zoom_planes", "Zoom out from this view. How many planes are in the wider area?", ["fair_crop"],
              "fair1m", "spatial_navigation",
              [_call("zoom_out_optical_image", image_id="fair_crop"),
               _call("get_object_bbox_by_optical_image", image_id="$0.image_id", target="plane")],
              _value("$1.count"), _count(fo, "plane")),
        _task("fair_right_ships", "Look to the right of the current view. How many ships are there?", ["fair_crop"],
              "fair1m", "spatial_navigation",
              [_call("move_right_optical_image", image_id="fair_crop"),
               _call("get_object_bbox_by_optical_image", image_id="$0.image_id", target="ship")],
              _value("$1.count"), _count(fo, "ship", (win[0] + quarter, win[2] + quarter), (win[1], win[3]))),
        _task("fair_down_planes", "Move the view down. How many planes are visible now?", ["fair_crop"],
              "fair1m", "spatial_navigation",
              [_call("move_down_optical_image", image_id="fair_crop"),
               _call("get_object_bbox_by_optical_image", image_id="$0.image_id", target="plane")],
              _value("$1.count"), _count(fo, "plane", (win[0], win[2]), (win[1] + quarter, win[3] + quarter))),
        _task("fair_crop_planes", "How many planes are in this view?", ["fair_crop"], "fair1m", "object_counting",
              [_call("get_object_bbox_by_optical_image", image_id="fair_crop", target="plane")],
              _value("$0.count"), _count(fo, "plane", (win[0], win[2]), (win[1], win[3]))),
    ]

    # --- m4sar: aligned optical/SAR pairs ---------------------------------------------------
    confirmed = []
    for p in range(spec.pair_count):
        opt, sar = _Canvas(rng, S), _Canvas(rng, S, channels=1, shade=0.1)
        shared = 3 + p
        confirmed.append(shared)
        for _ in range(shared):
            cell = sorted(opt.free & sar.free)[int(rng.integers(len(opt.free & sar.free)))]
            b = opt.put("ship", cell)
            sar.free.discard(cell)
            sar.objects.append(AnnotatedObject("ship", b))
            sar.paint(b, "ship")
        for b in opt.scatter("ship", 2):  # visible only in optical
            sar.free.discard((int(b.x_min) // CELL, int(b.y_min) // CELL))
        sar.scatter("ship", 1)  # visible only in SAR
        loc = GeoPoint(1.26 + p * 0.1, 103.84)
        when = t0 + timedelta(days=3 * p)
        oid, sid = f"m4_opt{p}", f"m4_sar{p}"
        save_image(oid, opt.pixels, sensor="sentinel2", location=loc, capture_time=when, gsd_m=10.0, companion_id=sid)
        save_image(sid, sar.pixels, modality="sar", sensor="sentinel1", location=loc, capture_time=when, gsd_m=10.0,
                   companion_id=oid)
        annotations += [opt.annotation(oid, "harbor"), sar.annotation(sid, "harbor")]
    tasks += [
        _task("m4_confirmed_ships", "How many ships are confirmed by both the SAR image and its optical companion?",
              ["m4_sar0"], "m4sar", "object_counting",
              [_call("get_optical_from_sar", image_id="m4_sar0"),
               _call("get_object_bbox_by_optical_sar_image", optical_image_id="$0.image_id",
                     sar_image_id="m4_sar0", target="ship")],
              _value("$1.count"), confirmed[0]),
        _task("m4_confirmed_vessels", "Using the optical image and its SAR companion, how many vessels are confirmed?",
              ["m4_opt1"], "m4sar", "object_counting",
              [_call("get_sar_from_optical", image_id="m4_opt1"),
               _call("get_object_bbox_by_optical_sar_image", optical_image_id="m4_opt1",
                     sar_image_id="$0.image_id", target="vessel")],
              _value("$1.count"), confirmed[1]),
    ]

    # --- sardet: SAR ship scene -----------------------------------------------------------------
    cv = _Canvas(rng, S, channels=1, shade=0.1)
    row = n_cells // 2
    cv.put("ship", (1, row), inset=3)
    cv.put("ship", (n_cells - 2, row), inset=3)  # same row, further right
    cv.scatter("ship", 5, region=lambda c: c[1] != row)
    save_image("sard_0", cv.pixels, modality="sar", sensor="gaofen3", location=GeoPoint(22.3, 114.17), gsd_m=3.0)
    annotations.append(cv.annotation("sard_0", "port"))
    so = cv.objects
    left, total = _count(so, "ship", (0, half)), _count(so, "ship")
    tasks += [
        _task("sard_ship_count", "How many ships are in this SAR image?", ["sard_0"], "sardet100k", "object_counting",
              [_call("get_object_bbox_by_sar_image", image_id="sard_0", target="ship")], _value("$0.count"), total),
        _task("sard_left_ratio", "What share of the ships lies in the western half of the image?", ["sard_0"],
              "sardet100k", "geospatial_reasoning",
              [_call("crop_optical_or_sar_image", image_id="sard_0", aoi=[0.0, 0.0, 0.5, 1.0]),
               _call("get_object_bbox_by_sar_image", image_id="$0.image_id", target="ship"),
               _call("get_object_bbox_by_sar_image", image_id="sard_0", target="ship"),
               _call("basic_calculator", expression="{$1.count}/{$2.count}")],
              _value("$3.value"), format_value(left / total)),
        _task("sard_direction", "Where is the second listed ship relative to the first one?", ["sard_0"], "sardet100k",
              "geospatial_reasoning",
              [_call("get_object_bbox_by_sar_image", image_id="sard_0", target="ship"),
               _call("get_bbox_geospatial_relationship", a="$0.boxes.0.bbox", b="$0.boxes.1.bbox")],
              _value("$1.direction"), "right"),
    ]

    # --- dota / dior / xview: generic optical scenes ------------------------------------------------
    cv = _Canvas(rng, S)
    cv.put("storage tank", (1, 1), attributes={"color": "white", "shape": "round"})
    cv.scatter("car", 3, region=lambda c: c[0] < n_cells // 2 and c[1] < n_cells // 2)
    cv.scatter("car", 4, region=lambda c: c[0] >= n_cells // 2 or c[1] >= n_cells // 2)
    save_image("dota_0", cv.pixels, sensor="google_earth", location=GeoPoint(30.59, 114.3), gsd_m=0.3)
    annotations.append(cv.annotation("dota_0", "industrial area"))
    do = cv.objects
    cv = _Canvas(rng, S)
    cv.scatter("plane", 4)
    cv.scatter("car", 2)
    save_image("dior_0", cv.pixels, sensor="google_earth", location=GeoPoint(40.08, 116.58), gsd_m=0.5)
    annotations.append(cv.annotation("dior_0", "airport"))
    cv = _Canvas(rng, S)
    cv.scatter("car", 3)
    cv.scatter("truck", 2)
    cv.scatter("van", 2)
    cv.scatter("building", 3)
    save_image("xview_0", cv.pixels, sensor="worldview3", location=GeoPoint(25.2, 55.27), gsd_m=0.3)
    annotations.append(cv.annotation("xview_0", "residential area"))
    xo = cv.objects
    tasks += [
        _task("xview_vehicle_count", "How many vehicles are in the image?", ["xview_0"], "xview", "object_counting",
              [_call("get_object_bbox_by_optical_image", image_id="xview_0", target="vehicle")],
              _value("$0.count"), sum(_count(xo, lab) for lab in ("car", "truck", "van"))),
        _task("dior_scene_type", "What kind of scene is shown?", ["dior_0"], "dior", "visual_understanding",
              [_call("analyze_optical_scene", image_id="dior_0")], _value("$0.scene"), "airport"),
        _task("dota_tank_color", "What colour is the storage tank?", ["dota_0"], "dota", "visual_understanding",
              [_call("describe_optical_object", image_id="dota_0", target="storage tank")],
              _value("$0.objects.0.attributes.color"), "white"),
        _task("dota_quadrant_cars", "How many cars are in the north-west quadrant?", ["dota_0"], "dota",
              "geospatial_reasoning",
              [_call("crop_optical_or_sar_image", image_id="dota_0", aoi=[0.0, 0.0, 0.5, 0.5]),
               _call("get_object_bbox_by_optical_image", image_id="$0.image_id", target="car")],
              _value("$1.count"), _count(do, "car", (0, half), (0, half))),
    ]

    # --- xbd: pre/post disaster pair ------------------------------------------------------------------
    pre, post = _Canvas(rng, S), _Canvas(rng, S)
    cells = sorted(pre.free)
    picks = sorted(int(i) for i in rng.choice(len(cells), size=8, replace=False))
    damage = ["minor-damage"] * 3 + ["no-damage"] * 2 + ["destroyed"] * 3
    for j, i in enumerate(picks):
        b = pre.put("building", cells[i])
        if damage[j] == "destroyed":
            continue  # rubble: not identifiable as a building afterwards
        post.free.discard(cells[i])
        post.objects.append(AnnotatedObject("building", b, attributes={"damage": damage[j]}))
        post.paint(b, "building")
    xloc = GeoPoint(18.47, -66.1)
    save_image("xbd_pre", pre.pixels, sensor="worldview2", location=xloc, capture_time=t0, gsd_m=0.5)
    save_image("xbd_post", post.pixels, sensor="worldview2", location=xloc, capture_time=t0 + timedelta(days=20),
               gsd_m=0.5)
    annotations += [pre.annotation("xbd_pre", "residential area"), post.annotation("xbd_post", "flooded area")]
    n_pre, n_post = len(pre.objects), len(post.objects)
    tasks += [
        _task("xbd_damage_majority", "What is the most common damage level among the remaining buildings?",
              ["xbd_pre", "xbd_post"], "xbd", "disaster_impact",
              [_call("describe_optical_object", image_id="xbd_post", target="building")],
              {"op": "majority", "path": "$0.objects", "field": "attributes.damage"}, "minor-damage"),
        _task("xbd_buildings_lost", "How many buildings from the pre-event image are missing after the event?",
              ["xbd_pre", "xbd_post"], "xbd", "disaster_impact",
              [_call("get_object_bbox_by_optical_image", image_id="xbd_pre", target="building"),
               _call("get_object_bbox_by_optical_image", image_id="xbd_post", target="building"),
               _call("basic_calculator", expression="{$0.count}-{$1.count}")],
              _value("$2.value"), n_pre - n_post),
    ]

    out.mkdir(parents=True, exist_ok=True)
    write_manifest(records, out / "manifest.jsonl")
    write_annotations(annotations, out / "annotations.jsonl")
    write_tasks(tasks, out / "tasks.jsonl")
    (out / "fixture_spec.json").write_text(json.dumps(spec.to_dict(), sort_keys=True, indent=2) + "\n")
    return {"out_dir": str(out), "records": len(records), "annotations": len(annotations), "tasks": len(tasks),
            "eo_tasks": sorted({t.eo_task for t in tasks})}
