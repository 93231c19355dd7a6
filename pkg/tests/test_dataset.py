import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sargdv.dataset import (
    ConfigurationError,
    InsufficientNegativesError,
    NoPositivesError,
    Polygon,
    PolygonSet,
    RegionSplit,
    SampleIndex,
    assemble_features,
    polygon_coverage,
    rasterize_polygons,
    region_indices,
    split_regions,
    undersample,
    write_exclusions,
)
from sargdv.raster import AlignmentError, BinaryMask, DataCube, GridGeometry
from sargdv.synth import acquisition_dates

from .oracles.geometry import random_convex_polygon, supersample_coverage

# pixel-space grid: lon = col, lat = -row
UNIT = GridGeometry(64, 64, 0.0, 0.0, 1.0, -1.0)


def px_polygon(xy):
    xy = np.asarray(xy, float)
    return Polygon(np.column_stack([xy[:, 0], -xy[:, 1]]))


def test_full_extent_polygon():
    geo = GridGeometry(5, 4, 140.0, -37.0, 0.01, -0.01)
    poly = Polygon([(140.0, -37.0), (140.05, -37.0), (140.05, -37.04), (140.0, -37.04)])
    assert rasterize_polygons(PolygonSet((poly,)), geo).values.all()


def test_empty_polygon_set():
    assert not rasterize_polygons(PolygonSet(), UNIT).values.any()


def test_exact_half_cell_is_inclusive():
    geo = GridGeometry(4, 4, 0.0, 0.0, 1.0, -1.0)
    mask = rasterize_polygons(PolygonSet((px_polygon([(1, 2), (1.5, 2), (1.5, 3), (1, 3)]),)), geo)
    expected = np.zeros((4, 4), np.uint8)
    expected[2, 1] = 1
    np.testing.assert_array_equal(mask.values, expected)


def test_just_under_half_is_excluded():
    geo = GridGeometry(4, 4, 0.0, 0.0, 1.0, -1.0)
    mask = rasterize_polygons(PolygonSet((px_polygon([(1, 2), (1.499, 2), (1.499, 3), (1, 3)]),)), geo)
    assert not mask.values.any()


def test_polygon_outside_extent_contributes_nothing():
    mask = rasterize_polygons(PolygonSet((px_polygon([(100, 100), (110, 100), (110, 110)]),)), UNIT)
    assert not mask.values.any()


def test_degenerate_ring_is_ignored(caplog):
    collinear = px_polygon([(1, 1), (2, 2), (3, 3)])
    square = px_polygon([(10, 10), (12, 10), (12, 12), (10, 12)])
    with caplog.at_level("WARNING"):
        mask = rasterize_polygons(PolygonSet((collinear, square)), UNIT)
    assert "zero area" in caplog.text
    assert mask.values.sum() == 4


def test_hole_is_subtracted():
    outer = np.array([(0, 0), (8, 0), (8, 8), (0, 8)], float)
    hole = np.array([(2, 2), (6, 2), (6, 6), (2, 6)], float)
    poly = Polygon(np.column_stack([outer[:, 0], -outer[:, 1]]),
                   (np.column_stack([hole[:, 0], -hole[:, 1]]),))
    cover = polygon_coverage(PolygonSet((poly,)), GridGeometry(8, 8, 0.0, 0.0, 1.0, -1.0))
    assert cover.sum() == pytest.approx(64 - 16)
    assert cover[3, 3] == 0 and cover[0, 0] == 1


def test_overlapping_polygons_use_union():
    a = px_polygon([(0, 0), (4, 0), (4, 4), (0, 4)])
    b = px_polygon([(2, 0), (6, 0), (6, 4), (2, 4)])
    cover = polygon_coverage(PolygonSet((a, b)), GridGeometry(8, 4, 0.0, 0.0, 1.0, -1.0))
    assert cover.max() == pytest.approx(1.0)
    assert cover.sum() == pytest.approx(24.0)


def test_exact_coverage_of_a_triangle():
    # right triangle over a 2x2 block: diagonal cells are half covered
    cover = polygon_coverage(PolygonSet((px_polygon([(0, 0), (2, 0), (0, 2)]),)),
                             GridGeometry(2, 2, 0.0, 0.0, 1.0, -1.0))
    np.testing.assert_allclose(cover, [[1.0, 0.5], [0.5, 0.0]], atol=1e-12)


def test_rasterizer_matches_supersampling_where_oracle_is_decisive():
    """Disagreements are allowed only where the 16x16 oracle's own sampling error reaches."""
    rng = np.random.default_rng(7)
    for _ in range(20):
        hull = random_convex_polygon(rng, UNIT.shape)
        exact = polygon_coverage(PolygonSet((px_polygon(hull),)), UNIT)
        oracle = supersample_coverage(hull, UNIT.shape)
        # a convex edge crosses a cell once; each sample row misjudges at most 1/16 of it
        assert np.abs(exact - oracle).max() <= 2 / 16 + 1e-12
        decisive = np.abs(exact - 0.5) > 2 / 16
        mask = rasterize_polygons(PolygonSet((px_polygon(hull),)), UNIT).values.astype(bool)
        np.testing.assert_array_equal(mask[decisive], (oracle >= 0.5)[decisive])


def test_area_is_conserved():
    rng = np.random.default_rng(3)
    for _ in range(10):
        hull = random_convex_polygon(rng, UNIT.shape)
        closed = np.vstack([hull, hull[:1]])
        shoelace = 0.5 * abs(np.sum(closed[:-1, 0] * closed[1:, 1] - closed[1:, 0] * closed[:-1, 1]))
        cover = polygon_coverage(PolygonSet((px_polygon(hull),)), UNIT)
        assert cover.sum() == pytest.approx(shoelace, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rasterization_is_monotone(seed):
    rng = np.random.default_rng(seed)
    polys = [px_polygon(random_convex_polygon(rng, (32, 32), (1.0, 6.0))) for _ in range(3)]
    geo = GridGeometry(32, 32, 0.0, 0.0, 1.0, -1.0)
    fewer = rasterize_polygons(PolygonSet(tuple(polys[:2])), geo).values
    more = rasterize_polygons(PolygonSet(tuple(polys)), geo).values
    assert np.all(more >= fewer)


def test_geojson_round_trip(tmp_path):
    ps = PolygonSet((px_polygon([(0, 0), (3, 0), (3, 3)]),))
    again = PolygonSet.from_geojson(ps.to_geojson())
    np.testing.assert_array_equal(again.polygons[0].exterior, ps.polygons[0].exterior)


# --- split ----------------------------------------------------------------


@pytest.mark.parametrize("width, n_train", [(2044, 1363), (3, 2)])
def test_split_examples(width, n_train):
    s = split_regions(GridGeometry(width, 4))
    assert s.train_cols == (0, n_train) and s.validation_cols == (n_train, width)


@pytest.mark.parametrize("width", [1, 2])
def test_split_empty_validation(width):
    # ceil(2 * 2/3) = 2 leaves nothing for validation as well
    with pytest.raises(ConfigurationError):
        split_regions(GridGeometry(width, 5))


def test_split_right_side():
    s = split_regions(GridGeometry(2044, 10), train_side="right")
    assert s.train_cols == (681, 2044) and s.validation_cols == (0, 681)
    assert RegionSplit.from_dict(s.to_dict()) == s


@given(st.integers(3, 5000), st.fractions(min_value="1/10", max_value="9/10"))
def test_split_partitions_width(width, frac):
    try:
        s = split_regions(GridGeometry(width, 1), float(frac))
    except ConfigurationError:
        return
    cols = sorted([s.train_cols, s.validation_cols])
    assert cols[0][0] == 0 and cols[0][1] == cols[1][0] and cols[1][1] == width


def test_region_indices():
    geo = GridGeometry(4, 2)
    np.testing.assert_array_equal(region_indices(geo, (1, 3)), [1, 2, 5, 6])


# --- undersampling --------------------------------------------------------


def _mask_with(n_pos, n_neg, seed=0):
    rng = np.random.default_rng(seed)
    flat = np.array([1] * n_pos + [0] * n_neg, np.uint8)
    rng.shuffle(flat)
    return BinaryMask(GridGeometry(10, (n_pos + n_neg) // 10), flat.reshape(-1, 10))


def test_undersample_ten_positives():
    mask = _mask_with(10, 90)
    s = undersample(mask, (0, 10), seed=42)
    assert len(s) == 20
    assert s.labels.sum() == 10
    positives = set(np.flatnonzero(mask.values.ravel() == 1))
    assert set(s.indices[s.labels == 1]) == positives
    negatives = set(np.flatnonzero(mask.values.ravel() == 0))
    assert set(s.indices[s.labels == 0]) <= negatives


def test_undersample_errors():
    with pytest.raises(NoPositivesError):
        undersample(BinaryMask(GridGeometry(5, 5), np.zeros((5, 5))), (0, 5), 0)
    with pytest.raises(InsufficientNegativesError):
        undersample(_mask_with(60, 40), (0, 10), 0)


def test_undersample_respects_region_and_validity():
    values = np.zeros((4, 6), np.uint8)
    values[:, 0] = 1
    values[:, 5] = 1
    valid = np.ones((4, 6), bool)
    valid[0, 1] = False
    s = undersample(BinaryMask(GridGeometry(6, 4), values), (0, 3), 1, valid=valid)
    assert set(s.indices[s.labels == 1]) == {0, 6, 12, 18}
    assert 1 not in set(s.indices)
    assert np.all(s.indices % 6 < 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_undersample_determinism_and_balance(seed_a, seed_b):
    mask = _mask_with(30, 170, seed=5)
    a1 = undersample(mask, (0, 10), seed_a)
    a2 = undersample(mask, (0, 10), seed_a)
    b = undersample(mask, (0, 10), seed_b)
    np.testing.assert_array_equal(a1.indices, a2.indices)
    assert a1.labels.sum() * 2 == len(a1)
    np.testing.assert_array_equal(a1.indices[a1.labels == 1], b.indices[b.labels == 1])
    assert np.all(np.diff(a1.indices) > 0)


def test_sample_index_csv(tmp_path):
    s = undersample(_mask_with(10, 90), (0, 10), seed=9)
    path = s.to_csv(tmp_path / "samples.csv")
    assert path.read_text().splitlines()[:2] == ["# seed=9", "index,label"]
    back = SampleIndex.from_csv(path)
    assert back.seed == 9
    np.testing.assert_array_equal(back.indices, s.indices)
    np.testing.assert_array_equal(back.labels, s.labels)


# --- features -------------------------------------------------------------


def _cubes(geo, vv, vh, cc):
    return (DataCube(geo, "VV", vv, acquisition_dates(30), strict=True),
            DataCube(geo, "VH", vh, acquisition_dates(30), strict=True),
            DataCube(geo, "CC", cc, acquisition_dates(30)[1:], strict=True))


def test_assemble_single_pixel():
    geo = GridGeometry(1, 1)
    vv = np.arange(1, 31, dtype=float).reshape(30, 1, 1)
    vh = np.arange(31, 61, dtype=float).reshape(30, 1, 1)
    cc = np.full((29, 1, 1), 0.5)
    fm = assemble_features(*_cubes(geo, vv, vh, cc))
    expected = np.r_[np.arange(1, 61), np.full(29, 0.5)]
    np.testing.assert_array_equal(fm.values, expected[None, :])
    assert fm.n_features == 89
    assert fm.feature_names[0] == "VV_1" and fm.feature_names[-1] == "CC_29"


def test_assemble_drops_nodata(tmp_path, rng):
    geo = GridGeometry(3, 2)
    vv, vh = rng.normal(size=(2, 30, 2, 3))
    cc = rng.uniform(size=(29, 2, 3))
    vh[6, 1, 2] = np.nan
    fm = assemble_features(*_cubes(geo, vv, vh, cc))
    assert len(fm) == 5
    np.testing.assert_array_equal(fm.excluded, [5])
    assert not np.isnan(fm.values).any()
    lines = write_exclusions(fm.excluded, tmp_path / "x.csv").read_text().splitlines()
    assert lines == ["index", "5"]


def test_assemble_matches_direct_lookup(rng):
    geo = GridGeometry(5, 4)
    vv, vh = rng.normal(size=(2, 30, 4, 5))
    cc = rng.uniform(size=(29, 4, 5))
    cubes = _cubes(geo, vv, vh, cc)
    samples = SampleIndex(np.array([3, 7, 19]), np.array([1, 0, 1]), 0)
    fm = assemble_features(*cubes, samples=samples)
    stack = np.concatenate([vv, vh, cc]).astype(np.float32)
    for i, idx in enumerate(samples.indices):
        r, c = divmod(int(idx), 5)
        np.testing.assert_array_equal(fm.values[i], stack[:, r, c])
    np.testing.assert_array_equal(fm.labels, [1, 0, 1])


def test_assemble_region_row_major(rng):
    geo = GridGeometry(4, 3)
    vv, vh = rng.normal(size=(2, 30, 3, 4))
    cc = rng.uniform(size=(29, 3, 4))
    fm = assemble_features(*_cubes(geo, vv, vh, cc), region=(2, 4))
    np.testing.assert_array_equal(fm.indices, [2, 3, 6, 7, 10, 11])


def test_assemble_alignment_error(rng):
    vv, vh = rng.normal(size=(2, 30, 2, 2))
    cc = rng.uniform(size=(29, 2, 2))
    a, b, _ = _cubes(GridGeometry(2, 2), vv, vh, cc)
    other = DataCube(GridGeometry(2, 2, origin_lon=1.0), "CC", cc, acquisition_dates(30)[1:])
    with pytest.raises(AlignmentError):
        assemble_features(a, b, other)
