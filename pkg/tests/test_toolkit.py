import json

import pytest
from hypothesis import given, strategies as st

from eogym.raster import BBox, clip_box
from eogym.toolkit import calculator
from eogym.toolkit.context import EpisodeContext
from eogym.toolkit.detection import Detection, cross_modal_confirm
from eogym.toolkit.execute import execute
from eogym.toolkit.registry import (
    DATASET_FAMILIES, SKILL_TOOLS, TOOLS, TOOLS_BY_NAME, UnknownFamilyError, canonical_name, function_manifest,
    inverse_tool_name, normalize_family, rename_tool_name, schema_set,
)
from eogym.toolkit.semantic import SynonymFilter, normalize_label
from eogym.toolkit.types import ExecutionMode, NoiseConfig, Observation, ToolCall


def _ctx(env, mode=ExecutionMode(), exposed=None):
    return EpisodeContext(env.index, env.annotations, mode, exposed, store=env.store)


def _run(ctx, name, **args):
    return execute(ToolCall(name, args), ctx)


# --- registry -------------------------------------------------------------------

def test_catalog_names_unique_and_skill_sets_closed():
    assert len(TOOLS) == len(TOOLS_BY_NAME) == 35
    for fam, names in SKILL_TOOLS.items():
        assert len(set(names)) == len(names), fam
        assert set(names) <= set(TOOLS_BY_NAME), fam


def test_every_tool_is_in_some_skill_set():
    used = set().union(*SKILL_TOOLS.values())
    assert used == set(TOOLS_BY_NAME)


def test_rename_is_a_bijection_with_inverse():
    renamed = [rename_tool_name(t.name)[0] for t in TOOLS]
    assert len(set(renamed)) == len(renamed)
    for t, r in zip(TOOLS, renamed):
        assert r != t.name
        assert inverse_tool_name(r) == t.name
        assert canonical_name(r, True) == t.name and canonical_name(t.name, False) == t.name


@given(st.from_regex(r"[a-z]{1,10}(_[a-z]{1,8}){0,3}", fullmatch=True))
def test_rename_round_trip_arbitrary_names(name):
    new, mapped = rename_tool_name(name)
    if mapped:
        assert inverse_tool_name(new) == name
    else:
        assert new == name


def test_renamed_schema_keeps_parameters():
    plain = {s.name: s for s in schema_set("fmow")}
    for s in schema_set("fmow", rename=True):
        orig = plain[inverse_tool_name(s.name)]
        assert s.params == orig.params and s.description == orig.description


def test_family_aliases():
    assert normalize_family("SARDet-100K") == "sardet100k"
    assert normalize_family("Sentinel-2") == "multispectral"
    assert normalize_family("FAIR1M") == "fair1m"
    with pytest.raises(UnknownFamilyError):
        normalize_family("imagenet")
    with pytest.raises(ValueError):
        schema_set("fmow", "some")


def test_function_manifest_shape():
    fns = function_manifest(schema_set("sardet100k"))
    assert [f["type"] for f in fns] == ["function"] * 5
    crop = next(f["function"] for f in fns if f["function"]["name"] == "crop_optical_or_sar_image")
    assert crop["parameters"]["required"] == ["image_id", "aoi"]
    assert crop["parameters"]["properties"]["aoi"]["type"] == "array"
    assert set(DATASET_FAMILIES) == set(SKILL_TOOLS)


# --- calculator -------------------------------------------------------------------

@pytest.mark.parametrize("expr, value", [
    ("1+2*3", 7.0), ("(1+2)*3", 9.0), ("7/2", 3.5), ("2**10", 1024.0), ("-3+abs(-4)", 1.0),
    ("max(1, 5, 3) - min(2, 4)", 3.0), ("sqrt(16)", 4.0), ("7 % 4", 3.0), ("round(2.567, 1)", 2.6),
])
def test_calculator_values(expr, value):
    assert calculator.evaluate(expr) == pytest.approx(value)


@pytest.mark.parametrize("expr", ["__import__('os')", "a+1", "1/0", "2**1000", "[1,2]", "1 if 1 else 2",
                                  "x" * 600, "sqrt(-1)", "1e308*10"])
def test_calculator_rejects(expr):
    with pytest.raises(calculator.CalculatorError):
        calculator.evaluate(expr)


@given(st.integers(-10**6, 10**6), st.integers(-10**6, 10**6))
def test_calculator_integer_arithmetic(a, b):
    assert calculator.evaluate(f"({a}) + ({b})") == a + b
    assert calculator.evaluate(f"({a}) * ({b})") == a * b


# --- execution ----------------------------------------------------------------------

def test_error_codes(env):
    ctx = _ctx(env)
    assert _run(ctx, "no_such_tool").error_code == "unknown-tool"
    assert execute(ToolCall("basic_calculator", "{not json"), ctx).error_code == "illegal-arguments"
    assert _run(ctx, "basic_calculator").error_code == "illegal-arguments"
    assert _run(ctx, "basic_calculator", expression="1+1", extra=2).error_code == "illegal-arguments"
    assert _run(ctx, "basic_calculator", expression="1/0").status == "error"
    assert _run(ctx, "crop_optical_or_sar_image", image_id="dior_0",
                aoi=[0.5, 0.5, 0.5, 0.9]).error_code == "degenerate-aoi"
    assert _run(ctx, "get_object_bbox_by_optical_image", image_id="ghost",
                target="car").error_code == "unknown-image"
    assert _run(ctx, "get_object_bbox_by_sar_image", image_id="dior_0",
                target="ship").error_code == "modality-mismatch"
    assert _run(ctx, "get_next_optical_image", image_id="dior_0").error_code == "no-temporal-group"
    assert _run(ctx, "compute_ndvi_by_multispectral", scene_id="dior_0").error_code == "modality-mismatch"
    assert _run(ctx, "get_mask_geospatial_relationship", mask_a="mask_9",
                mask_b="mask_8").error_code == "unknown-mask"
    assert _run(ctx, "theme_index_lookup", theme="lava").error_code == "unknown-theme"


def test_tool_outside_exposed_set_is_unknown(env):
    ctx = _ctx(env, exposed=frozenset({"basic_calculator"}))
    assert _run(ctx, "analyze_optical_scene", image_id="dior_0").error_code == "unknown-tool"
    assert _run(ctx, "basic_calculator", expression="2+2").payload["value"] == 4


def test_renamed_names_resolve(env):
    mode = ExecutionMode(rename=True)
    exposed = frozenset(s.name for s in schema_set("xview", rename=True))
    ctx = _ctx(env, mode, exposed)
    obs = _run(ctx, "access_object_bbox_by_optical_image", image_id="xview_0", target="car")
    assert obs.status == "ok"
    assert _run(ctx, "get_object_bbox_by_optical_image", image_id="xview_0", target="car").error_code \
        == "unknown-tool"


def _truth(fixture_dir, image_id, labels):
    for line in (fixture_dir / "annotations.jsonl").read_text().splitlines():
        d = json.loads(line)
        if d["record_id"] == image_id:
            return [o for o in d["objects"] if o["label"] in labels], d
    raise KeyError(image_id)


def test_verified_counts_equal_annotation(env, fixture_dir):
    ships, _ = _truth(fixture_dir, "sard_0", {"ship", "boat"})
    obs = _run(_ctx(env), "get_object_bbox_by_sar_image", image_id="sard_0", target="ships")
    assert obs.payload["count"] == len(ships)


def test_crop_then_detect_uses_patch_frame(env, fixture_dir):
    ctx = _ctx(env)
    crop = _run(ctx, "crop_optical_or_sar_image", image_id="dota_0", aoi=[0.0, 0.0, 0.5, 0.5])
    assert crop.status == "ok"
    w, h = crop.payload["width"], crop.payload["height"]
    cars, _ = _truth(fixture_dir, "dota_0", {"car"})
    want = []
    for o in cars:
        b = clip_box(BBox(*o["bbox"]), w, h)
        if b is not None:
            want.append(list(b.coords))
    obs = _run(ctx, "get_object_bbox_by_optical_image", image_id=crop.payload["image_id"], target="car")
    assert want and obs.status == "ok"
    assert sorted(b["bbox"] for b in obs.payload["boxes"]) == sorted(want)


def test_empty_detection_is_empty_not_error(env):
    obs = _run(_ctx(env), "get_object_bbox_by_optical_image", image_id="dior_0", target="submarine")
    assert obs.status == "empty" and obs.payload is None


def test_unverified_is_seeded(env):
    def boxes(seed):
        ctx = _ctx(env, ExecutionMode(response="unverified", seed=seed))
        return _run(ctx, "get_object_bbox_by_optical_image", image_id="xview_0", target="car").to_dict()

    assert boxes(1) == boxes(1)
    assert any(boxes(1) != boxes(s) for s in range(2, 8))


def test_zero_noise_unverified_matches_verified(env):
    quiet = ExecutionMode(response="unverified", noise=NoiseConfig(0.0, 0.0, 0.0))
    a = _run(_ctx(env, quiet), "get_object_bbox_by_optical_image", image_id="xview_0", target="car")
    b = _run(_ctx(env), "get_object_bbox_by_optical_image", image_id="xview_0", target="car")
    assert a.payload["count"] == b.payload["count"]
    assert [x["bbox"] for x in a.payload["boxes"]] == [x["bbox"] for x in b.payload["boxes"]]


def test_unverified_leaves_sar_and_spectral_exact(env):
    noisy = _ctx(env, ExecutionMode(response="unverified", seed=5))
    exact = _ctx(env)
    for name, args in (("get_object_bbox_by_sar_image", {"image_id": "sard_0", "target": "ship"}),
                       ("compute_ndvi_by_multispectral", {"scene_id": "s2_t0"})):
        assert _run(noisy, name, **args) == _run(exact, name, **args)


def test_mask_tools_and_relationship(env):
    ctx = _ctx(env)
    water = _run(ctx, "compute_water_mask_by_multispectral", scene_id="s2_t1")
    veg = _run(ctx, "compute_vegetation_mask_by_multispectral", scene_id="s2_t1")
    assert water.status == veg.status == "ok"
    assert water.payload["fraction"] == pytest.approx(water.payload["area_px"] / (
        water.payload["width"] * water.payload["height"]))
    rel = _run(ctx, "get_mask_geospatial_relationship", mask_a=water.payload["mask_id"],
               mask_b=veg.payload["mask_id"])
    assert rel.status == "ok" and rel.payload["relation"] == "disjoint"


def test_index_tool_stats(env):
    obs = _run(_ctx(env), "compute_ndwi_by_multispectral", scene_id="s2_t1")
    assert obs.kind == "index_stats"
    assert -1.0 <= obs.payload["mean"] <= 1.0
    assert 0.0 <= obs.payload["fraction_above_threshold"] <= 1.0


def test_cross_modal_confirm():
    opt = [Detection(BBox(0, 0, 10, 10, label="ship")), Detection(BBox(50, 50, 60, 60, label="ship")),
           Detection(BBox(0, 0, 10, 10, label="car"))]
    sar = [Detection(BBox(1, 0, 10, 10, label="ship")), Detection(BBox(55, 55, 65, 65, label="ship"))]
    kept = cross_modal_confirm(opt, sar, 0.5)
    assert [d.box.coords for d in kept] == [(0, 0, 10, 10)]
    assert kept[0].box.label == "ship"


def test_synonym_filter():
    f = SynonymFilter()
    labels = {"car", "truck", "ship", "plane", "storage tank", "building"}
    assert f("vehicles", labels) == {"car", "truck"}
    assert f("Vessel", labels) == {"ship"}
    assert f("aircraft", labels) == {"plane"}
    assert f("object", labels) == labels
    assert f("submarine", labels) == set()
    assert normalize_label("  Storage-Tanks ") == normalize_label("storage tank")


def test_observation_invariants():
    with pytest.raises(ValueError):
        Observation("error", None, None, "x", None)
    with pytest.raises(ValueError):
        Observation("empty", "boxes", {"count": 0})
    o = Observation.ok("scalar", {"value": 2})
    assert Observation.from_dict(json.loads(o.to_text())) == o
