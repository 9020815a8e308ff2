from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from eogym.raster import AOI
from eogym.spectral import (
    BandDimensionError, BandSet, MissingBandError, SpectralError, UnknownThemeError, band_for_role, band_roles,
    compute_index, load_bandset, normalized_difference, save_bandset, thematic_mask, theme_index_lookup,
)

refl = arrays(np.float32, (6, 6), elements=st.floats(0, 1, width=32))


@pytest.mark.parametrize("platform, role, band", [
    ("landsat8", "nir", "SR_B5"), ("landsat9", "red", "SR_B4"), ("landsat8", "swir1", "SR_B6"),
    ("sentinel2a", "nir", "B8"), ("sentinel2b", "green", "B3"), ("sentinel2a", "swir1", "B11"),
])
def test_band_roles(platform, role, band):
    assert band_for_role(platform, role) == band


def test_band_tables_cover_both_platforms():
    assert len(band_roles("landsat8")) == 8
    assert len(band_roles("sentinel2a")) == 14
    with pytest.raises(SpectralError):
        band_roles("modis")


def test_normalized_difference_zero_denominator_is_nan():
    v = normalized_difference(np.array([0.0, 1.0, 3.0]), np.array([0.0, 1.0, 1.0]))
    assert np.isnan(v[0])
    assert v[1:] == pytest.approx([0.0, 0.5])


@given(refl, refl)
def test_index_bounded_and_antisymmetric(a, b):
    v = normalized_difference(a, b)
    w = normalized_difference(b, a)
    finite = ~np.isnan(v)
    assert np.array_equal(finite, ~np.isnan(w))
    assert np.all(np.abs(v[finite]) <= 1.0)
    assert np.allclose(v[finite], -w[finite], atol=1e-12)


@given(refl, refl, st.floats(-1, 1), st.floats(-1, 1))
def test_threshold_masks_nest(nir, red, t1, t2):
    lo, hi = sorted((t1, t2))
    bs = BandSet("synthetic", {"B4": red, "B8": nir})
    m_lo, m_hi = thematic_mask(bs, "vegetation", lo), thematic_mask(bs, "vegetation", hi)
    assert not np.any(m_hi.bits & ~m_lo.bits)


def test_index_stats_on_constructed_scene():
    # left half vegetation (nir 0.5, red 0.1), right half bare (nir 0.2, red 0.2)
    nir = np.full((4, 4), 0.2, np.float32)
    red = np.full((4, 4), 0.2, np.float32)
    nir[:, :2], red[:, :2] = 0.5, 0.1
    r = compute_index(BandSet("synthetic", {"B4": red, "B8": nir}), "ndvi")
    veg = (0.5 - 0.1) / (0.5 + 0.1)
    assert r.mean == pytest.approx(veg / 2, abs=1e-6)
    assert r.frac_above == 0.5
    assert r.valid_pixels == 16
    assert r.threshold == 0.3


def test_all_nan_scene_reports_no_valid_pixels():
    z = np.zeros((3, 3), np.float32)
    r = compute_index(BandSet("synthetic", {"B4": z, "B8": z}), "ndvi")
    assert r.valid_pixels == 0 and r.frac_above == 0.0 and np.isnan(r.mean)


def test_missing_band_and_shape_errors():
    with pytest.raises(MissingBandError):
        compute_index(BandSet("synthetic", {"B4": np.ones((2, 2))}), "ndvi")
    with pytest.raises(BandDimensionError):
        BandSet("synthetic", {"B4": np.ones((2, 2)), "B8": np.ones((3, 3))})
    with pytest.raises(SpectralError):
        compute_index(BandSet("synthetic", {"B4": np.ones((2, 2))}), "evi")


def test_landsat_scene_uses_landsat_bands():
    nir, red = np.full((2, 2), 0.6, np.float32), np.full((2, 2), 0.2, np.float32)
    r = compute_index(BandSet("landsat8", {"SR_B5": nir, "SR_B4": red}), "ndvi")
    assert r.mean == pytest.approx(0.5, abs=1e-6)


@pytest.mark.parametrize("theme, index, bands", [
    ("vegetation", "NDVI", ["NIR", "Red"]), ("water", "NDWI", ["Green", "NIR"]),
    ("urban", "NDBI", ["SWIR1", "NIR"]), ("snow", "NDSI", ["Green", "SWIR1"]),
])
def test_theme_lookup(theme, index, bands):
    d = theme_index_lookup(theme.upper())
    assert d["index_name"] == index
    assert d["required_bands"] == bands


def test_unknown_theme():
    with pytest.raises(UnknownThemeError):
        theme_index_lookup("lava")


def test_crop_and_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    bs = BandSet("sentinel2a", {"B4": rng.uniform(size=(8, 8)), "B8": rng.uniform(size=(8, 8))},
                 datetime(2021, 3, 1, tzinfo=timezone.utc), 10.0)
    c = bs.crop(AOI(0.5, 0, 1, 0.5))
    assert c.shape == (4, 4)
    assert np.array_equal(c.bands["B8"], bs.bands["B8"][:4, 4:])
    save_bandset(bs, tmp_path / "scene")
    back = load_bandset(tmp_path / "scene", "scene")
    assert back.capture_time == bs.capture_time and back.gsd_m == 10.0
    assert all(np.array_equal(back.bands[k], bs.bands[k]) for k in bs.bands)


def test_half_vegetation_mask_is_left_half():
    nir = np.full((6, 8), 0.1, np.float32)
    red = np.full((6, 8), 0.3, np.float32)
    nir[:, :4], red[:, :4] = 0.6, 0.1
    bs = BandSet("synthetic", {"B4": red, "B8": nir})
    want = np.zeros((6, 8), bool)
    want[:, :4] = True
    assert np.array_equal(thematic_mask(bs, "vegetation").bits, want)
    assert thematic_mask(bs, "vegetation", 1.1).area == 0


def test_all_zero_bands_give_empty_mask():
    z = np.zeros((4, 4), np.float32)
    assert thematic_mask(BandSet("synthetic", {"B3": z, "B8": z}), "water").area == 0
