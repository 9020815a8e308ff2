import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from eogym.raster import (
    AOI, BBox, BinaryMask, DegenerateAOIError, DimensionMismatchError, InvalidBoxError, MissingProvenanceError,
    RasterPatch, aoi_to_pixels, bbox_relationship, box_iou, clip_box, compass_sector, crop_aoi, crop_pixels,
    mask_relationship, normalize_bboxes, pan, rasterize_boxes, rasterize_polygon, read_patch, write_patch,
    zoom_out,
)


def _base(w=64, h=48):
    px = np.arange(w * h * 3, dtype=np.float32).reshape(h, w, 3)
    return RasterPatch(px, image_id="img")


coord = st.floats(0, 200, allow_nan=False)


@st.composite
def boxes(draw):
    x0, y0 = draw(coord), draw(coord)
    w, h = draw(st.floats(0.5, 100)), draw(st.floats(0.5, 100))
    return BBox(x0, y0, x0 + w, y0 + h)


@pytest.mark.parametrize("aoi, want", [
    (AOI(0, 0, 1, 1), (0, 0, 64, 48)),
    (AOI(0.5, 0.5, 1, 1), (32, 24, 64, 48)),
    (AOI(0.1, 0.1, 0.2, 0.2), (6, 4, 13, 10)),  # floor(6.4), floor(4.8), ceil(12.8), ceil(9.6)
])
def test_aoi_to_pixels(aoi, want):
    assert aoi_to_pixels(aoi, 64, 48) == want


@pytest.mark.parametrize("edges", [(0.5, 0.1, 0.5, 0.9), (0.2, 0.3, 0.1, 0.9), (-0.1, 0, 0.5, 0.5),
                                   (0, 0, 1.2, 1), (float("nan"), 0, 1, 1)])
def test_degenerate_aoi(edges):
    with pytest.raises(DegenerateAOIError):
        AOI(*edges)


def test_crop_records_provenance():
    c = crop_aoi(_base(), AOI(0.25, 0.5, 0.75, 1.0))
    assert c.origin == (16, 24)
    assert (c.width, c.height) == (32, 24)
    assert c.root_id == "img"
    assert np.array_equal(c.pixels, _base().pixels[24:48, 16:48])


def test_crop_without_identity_fails():
    with pytest.raises(MissingProvenanceError):
        crop_pixels(RasterPatch(np.zeros((4, 4, 3))), 0, 0, 2, 2)
    with pytest.raises(MissingProvenanceError):
        pan(_base(), "left")


def test_pan_clamps_at_edges():
    c = crop_pixels(_base(), 40, 10, 60, 30)  # 20x20 window
    right = pan(c, "right")
    assert right.origin == (44, 10)  # 40 + 10 would exceed 64 - 20
    assert right.meta["edge_clamped"]
    left = pan(c, "left")
    assert left.origin == (30, 10) and not left.meta["edge_clamped"]
    up = pan(pan(c, "up"), "up")
    assert up.origin == (40, 0) and up.meta["edge_clamped"]
    with pytest.raises(ValueError):
        pan(c, "sideways")


def test_zoom_out_grows_around_centre_and_clamps():
    c = crop_pixels(_base(), 24, 16, 40, 32)  # 16x16
    z = zoom_out(c, 2.0)
    assert (z.width, z.height) == (32, 32) and z.origin == (16, 8)
    corner = crop_pixels(_base(), 0, 0, 16, 16)
    zc = zoom_out(corner, 2.0)
    assert zc.origin == (0, 0) and zc.meta["edge_clamped"]
    whole = zoom_out(crop_pixels(_base(), 0, 0, 40, 40), 4.0)
    assert (whole.width, whole.height) == (64, 48)
    with pytest.raises(ValueError):
        zoom_out(c, 1.0)


def test_box_iou_known_values():
    a = BBox(0, 0, 2, 2)
    assert box_iou(a, BBox(1, 0, 3, 2)) == pytest.approx(2 / 6)
    assert box_iou(a, BBox(2, 0, 4, 2)) == 0.0  # touching edges
    assert box_iou(a, BBox(0.5, 0.5, 1.5, 1.5)) == pytest.approx(1 / 4)


@given(boxes(), boxes())
def test_iou_symmetric_bounded(a, b):
    v = box_iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(box_iou(b, a))


@given(boxes())
def test_iou_self_is_one(a):
    assert box_iou(a, a) == pytest.approx(1.0)


def test_invalid_box():
    with pytest.raises(InvalidBoxError):
        BBox(1, 0, 1, 2)
    with pytest.raises(InvalidBoxError):
        BBox(0, 0, 1, 1, score=1.5)


@pytest.mark.parametrize("dx, dy, sector", [
    (1, 0, "right"), (1, -1, "above-right"), (0, -1, "above"), (-1, -1, "above-left"),
    (-1, 0, "left"), (-1, 1, "below-left"), (0, 1, "below"), (1, 1, "below-right"), (0, 0, "center"),
])
def test_compass_sectors(dx, dy, sector):
    # image y grows downwards
    assert compass_sector(dx, dy) == sector


def test_bbox_relationship_cases():
    a = BBox(0, 0, 10, 10)
    assert bbox_relationship(a, BBox(20, 0, 30, 10)).direction == "right"
    assert bbox_relationship(a, BBox(5, 5, 15, 15)).direction == "overlapping"
    inner = bbox_relationship(a, BBox(2, 2, 4, 4))
    assert inner.direction == "contained" and inner.containment == "b_in_a"
    assert inner.iou == pytest.approx(4 / 100)
    pt = bbox_relationship((5, 5), a)
    assert pt.containment == "a_in_b"
    with pytest.raises(InvalidBoxError):
        bbox_relationship(a, BBox(0, 0, 300, 10), frame_dims=(100, 100))


@given(boxes(), st.floats(0.01, 0.49), st.floats(0.01, 0.49))
def test_contained_box_overlaps(outer, fx, fy):
    w, h = outer.x_max - outer.x_min, outer.y_max - outer.y_min
    inner = BBox(outer.x_min + fx * w, outer.y_min + fy * h, outer.x_max - fx * w, outer.y_max - fy * h)
    assume(inner.x_min < inner.x_max and inner.y_min < inner.y_max)
    rel = bbox_relationship(outer, inner)
    assert rel.containment in ("b_in_a", "mutual")
    assert rel.iou > 0


def test_clip_box_marks_truncation():
    assert clip_box(BBox(-5, 0, 5, 5), 10, 10).coords == (0, 0, 5, 5)
    assert clip_box(BBox(-5, 0, 5, 5), 10, 10).truncated
    assert not clip_box(BBox(1, 1, 2, 2), 10, 10).truncated
    assert clip_box(BBox(20, 20, 30, 30), 10, 10) is None


@given(st.lists(boxes(), max_size=5), st.floats(10, 500), st.floats(10, 500))
def test_normalize_round_trip(bs, w, h):
    back = normalize_bboxes(normalize_bboxes(bs, (300, 200), (w, h)), (w, h), (300, 200))
    for a, b in zip(bs, back):
        assert b.coords == pytest.approx(a.coords, rel=1e-9, abs=1e-9)


def test_mask_relations():
    a = np.zeros((8, 8), bool)
    a[:4, :4] = True
    b = np.zeros((8, 8), bool)
    b[:2, :2] = True
    c = np.zeros((8, 8), bool)
    c[6:, 6:] = True
    A, B, C, E = BinaryMask(a), BinaryMask(b), BinaryMask(c), BinaryMask(np.zeros((8, 8), bool))
    r = mask_relationship(A, B)
    assert r.relation == "a_contains_b" and r.iou == pytest.approx(4 / 16) and r.b_frac_in_a == 1.0
    assert mask_relationship(A, A).relation == "equal"
    d = mask_relationship(A, C)
    assert d.relation == "disjoint" and d.direction == "below-right"
    empty = mask_relationship(E, E)
    assert empty.relation == "both-empty" and empty.iou == 0.0 and empty.both_empty
    assert not mask_relationship(A, E).a_contains_b
    with pytest.raises(DimensionMismatchError):
        mask_relationship(A, BinaryMask(np.zeros((4, 4), bool)))


def test_rasterize_boxes_area_matches_integer_box():
    m = rasterize_boxes([BBox(2, 3, 7, 5), BBox(0, 0, 1, 1)], 10, 10)
    assert m.area == 5 * 2 + 1
    assert m.bits[3:5, 2:7].all()


def test_polygon_square_equals_box():
    sq = rasterize_polygon([(2, 2), (6, 2), (6, 7), (2, 7)], 10, 10)
    assert sq == rasterize_boxes([BBox(2, 2, 6, 7)], 10, 10)


def test_patch_file_round_trip(tmp_path):
    px = np.random.default_rng(0).uniform(0, 1, (5, 7, 3)).astype(np.float32)
    write_patch(tmp_path / "p.eog", px)
    assert np.array_equal(read_patch(tmp_path / "p.eog"), px)


def test_mask_centroid():
    bits = np.zeros((4, 4), bool)
    bits[1, 2] = True
    assert BinaryMask(bits).centroid() == (2.5, 1.5)
    assert BinaryMask(np.zeros((2, 2), bool)).centroid() is None
    assert math.isclose(BinaryMask(np.ones((4, 4), bool)).centroid()[0], 2.0)
