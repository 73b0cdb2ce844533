import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from esvkit.errors import RasterFormatError, SchemeMismatch, ShapeMismatch, UndefinedChange, UnmappedCode
from esvkit.raster import (
    DEFAULT_BIOMES,
    AreaTable,
    ClassScheme,
    LulcGrid,
    class_areas,
    class_counts,
    decode_pair,
    encode_pair,
    lulc_change,
    read_binary,
    read_class_scheme,
    read_esri_ascii,
    read_raster,
    reclassify,
    transition_matrix,
    write_binary,
    write_esri_ascii,
)
from esvkit.synthetic import SOURCE_CLASSES

K = len(DEFAULT_BIOMES)
FOREST, CROP = DEFAULT_BIOMES.index("forest land"), DEFAULT_BIOMES.index("cropland")
SCHEME = ClassScheme.from_pairs(SOURCE_CLASSES, DEFAULT_BIOMES)


def biome_grid(cells, area=1.0, nodata=-9999):
    return LulcGrid(np.asarray(cells), area, nodata, "", DEFAULT_BIOMES)


def random_biome_grid(rng, shape, nodata_frac=0.1, area=1.0):
    cells = rng.integers(0, K, size=shape)
    cells[rng.random(shape) < nodata_frac] = -9999
    return biome_grid(cells, area)


# --- LulcGrid / ClassScheme ------------------------------------------------


def test_grid_is_immutable_and_validated():
    g = biome_grid([[0, 1], [2, -9999]])
    assert g.shape == (2, 2) and g.rows * g.cols == g.cells.size
    with pytest.raises(ValueError):
        g.cells[0, 0] = 3
    with pytest.raises(ValueError):
        LulcGrid(np.zeros((2, 2)), 0.0)
    with pytest.raises(ShapeMismatch):
        LulcGrid(np.zeros(4), 1.0)
    with pytest.raises(UnmappedCode):
        biome_grid([[0, K]])


def test_default_scheme_has_eight_biomes():
    assert K == 8
    assert set(SCHEME.mapping.values()) == set(range(K))


# --- reclassify ---------------------------------------------------------------


def test_reclassify_identity_scheme():
    cells = np.array([[0, 3, 7], [-9999, 1, 2]])
    out = reclassify(LulcGrid(cells, 1.0), ClassScheme.identity(DEFAULT_BIOMES))
    np.testing.assert_array_equal(out.cells, cells)
    assert out.biomes == DEFAULT_BIOMES


def test_reclassify_plantation_merges_into_cropland():
    plantation = next(c for c, n, _ in SOURCE_CLASSES if n == "plantation")
    forest = next(c for c, n, _ in SOURCE_CLASSES if n == "mixed forest")
    out = reclassify(LulcGrid([[plantation, forest]], 1.0), SCHEME)
    assert out.cells.tolist() == [[CROP, FOREST]]


def test_reclassify_matches_per_cell_lookup():
    rng = np.random.default_rng(5)
    for _ in range(20):
        mapping = {code: int(rng.integers(0, K)) for code, _, _ in SOURCE_CLASSES}
        scheme = ClassScheme(tuple((c, n) for c, n, _ in SOURCE_CLASSES), DEFAULT_BIOMES, mapping)
        cells = rng.choice(list(mapping), size=(3, 3))
        out = reclassify(LulcGrid(cells, 1.0), scheme)
        for r in range(3):
            for c in range(3):
                assert out.cells[r, c] == mapping[int(cells[r, c])]


def test_reclassify_unmapped_code_reports_position():
    with pytest.raises(UnmappedCode) as info:
        reclassify(LulcGrid([[1, 2], [99, 1]], 1.0), SCHEME)
    assert (info.value.code, info.value.row, info.value.col) == (99, 1, 0)


def test_reclassify_moves_colliding_nodata():
    out = reclassify(LulcGrid([[0, 1]], 1.0, nodata_code=0), ClassScheme.identity(DEFAULT_BIOMES))
    assert out.nodata_code == -9999
    assert out.cells.tolist() == [[-9999, 1]]


@given(arrays(np.int64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
              elements=st.sampled_from([c for c, _, _ in SOURCE_CLASSES] + [-9999])))
def test_reclassify_preserves_shape_and_nodata_mask(cells):
    g = LulcGrid(cells, 1.0)
    out = reclassify(g, SCHEME)
    assert out.shape == g.shape
    np.testing.assert_array_equal(out.valid_mask, g.valid_mask)


# --- class_areas / lulc_change ----------------------------------------------


def test_class_areas_uniform_grid():
    a = class_areas(biome_grid(np.full((10, 10), CROP)))
    assert a.as_dict()["cropland"] == 100.0
    assert a.total == 100.0


def test_class_areas_excludes_nodata():
    a = class_areas(biome_grid([[CROP, CROP], [FOREST, -9999]], area=0.5)).as_dict()
    assert a["cropland"] == 1.0 and a["forest land"] == 0.5
    assert sum(a.values()) == 1.5


def test_class_areas_matches_histogram_oracle():
    rng = np.random.default_rng(1)
    g = random_biome_grid(rng, (50, 50), area=0.37)
    counts = [0] * K
    for v in g.cells.ravel():
        if v != -9999:
            counts[v] += 1
    assert class_areas(g).area_ha.tolist() == [c * 0.37 for c in counts]


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 1000.0))
def test_area_total_is_valid_count_times_cell_area(seed, area):
    g = random_biome_grid(np.random.default_rng(seed), (12, 9), area=area)
    assert class_areas(g).total == int(g.valid_mask.sum()) * g.cell_area_ha


def test_class_areas_requires_reclassified_grid():
    with pytest.raises(SchemeMismatch):
        class_counts(LulcGrid([[1]], 1.0))


def _areas(values):
    return AreaTable(tuple(f"b{i}" for i in range(len(values))), values)


def test_lulc_change_examples():
    assert lulc_change(_areas([100.0]), _areas([110.0]))["b0"] == pytest.approx(10.0, abs=1e-12)
    assert lulc_change(_areas([5.0, 7.0]), _areas([5.0, 7.0])) == {"b0": 0.0, "b1": 0.0}
    assert lulc_change(_areas([389.32]), _areas([402.54]))["b0"] == pytest.approx(3.3957, abs=1e-4)


def test_lulc_change_empty_classes():
    assert lulc_change(_areas([0.0]), _areas([0.0]))["b0"] == 0.0
    with pytest.raises(UndefinedChange):
        lulc_change(_areas([0.0]), _areas([1.0]))
    assert np.isnan(lulc_change(_areas([0.0]), _areas([1.0]), strict=False)["b0"])


@given(st.lists(st.tuples(st.floats(0.1, 1e6), st.floats(0.0, 1e6)), min_size=1, max_size=8),
       st.floats(1e-3, 1e3))
def test_lulc_change_is_scale_free(pairs, lam):
    a0, a1 = [p[0] for p in pairs], [p[1] for p in pairs]
    base = lulc_change(_areas(a0), _areas(a1))
    scaled = lulc_change(_areas([v * lam for v in a0]), _areas([v * lam for v in a1]))
    for k in base:
        assert scaled[k] == pytest.approx(base[k], rel=1e-9, abs=1e-9)


# --- transitions ------------------------------------------------------------


def test_identical_grids_give_diagonal_matrix():
    g = random_biome_grid(np.random.default_rng(2), (15, 15))
    tm = transition_matrix(g, g)
    assert (tm.counts == np.diag(np.diag(tm.counts))).all()
    np.testing.assert_array_equal(np.diag(tm.area_ha), class_areas(g).area_ha)


def test_single_conversion():
    tm = transition_matrix(biome_grid([[FOREST, FOREST]]), biome_grid([[CROP, FOREST]]))
    assert tm.area_ha[FOREST, CROP] == 1.0
    assert tm.area_ha[FOREST, FOREST] == 1.0
    assert tm.area_ha.sum() == 2.0


def test_transition_matrix_matches_pair_count_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        a, b = random_biome_grid(rng, (20, 20), 0.0, 2.5), random_biome_grid(rng, (20, 20), 0.0, 2.5)
        oracle = np.zeros((K, K))
        for r in range(20):
            for c in range(20):
                oracle[a.cells[r, c], b.cells[r, c]] += 2.5
        tm = transition_matrix(a, b)
        np.testing.assert_array_equal(tm.area_ha, oracle)
        np.testing.assert_array_equal(tm.start_areas(), class_areas(a).area_ha)
        np.testing.assert_array_equal(tm.end_areas(), class_areas(b).area_ha)


@given(st.integers(0, 2**32 - 1))
def test_transition_marginals_with_nodata(seed):
    rng = np.random.default_rng(seed)
    a, b = random_biome_grid(rng, (11, 7), 0.2, 0.3), random_biome_grid(rng, (11, 7), 0.2, 0.3)
    tm = transition_matrix(a, b)
    both = a.valid_mask & b.valid_mask
    # marginals equal the class areas over cells valid in both epochs
    sa = class_areas(LulcGrid(np.where(both, a.cells, -9999), 0.3, -9999, "", DEFAULT_BIOMES))
    sb = class_areas(LulcGrid(np.where(both, b.cells, -9999), 0.3, -9999, "", DEFAULT_BIOMES))
    np.testing.assert_allclose(tm.start_areas(), sa.area_ha, rtol=1e-9)
    np.testing.assert_allclose(tm.end_areas(), sb.area_ha, rtol=1e-9)
    assert (tm.counts >= 0).all()


def test_transition_errors():
    with pytest.raises(ShapeMismatch):
        transition_matrix(biome_grid([[0, 1]]), biome_grid([[0], [1]]))
    other = LulcGrid([[0, 1]], 1.0, biomes=("a", "b"))
    with pytest.raises(SchemeMismatch):
        transition_matrix(biome_grid([[0, 1]]), other)


@given(st.integers(1, 20), st.data())
def test_pair_code_is_a_bijection(k, data):
    c = data.draw(st.integers(0, k * k - 1))
    i, j = decode_pair(c, k)
    assert 0 <= i < k and 0 <= j < k
    assert encode_pair(i, j, k) == c


# --- file formats -----------------------------------------------------------


def test_ascii_and_binary_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    cells = rng.choice([c for c, _, _ in SOURCE_CLASSES], size=(7, 5))
    cells[0, 0] = -9999
    g = LulcGrid(cells, 0.25, -9999, "x")
    write_esri_ascii(tmp_path / "g.asc", g)
    write_binary(tmp_path / "g.lulc", g)
    for path in (tmp_path / "g.asc", tmp_path / "g.lulc"):
        back = read_raster(path, 0.25, "x")
        np.testing.assert_array_equal(back.cells, cells)
        assert back.nodata_code == -9999
    assert (tmp_path / "g.lulc").read_bytes()[:4] == b"LULC"
    assert len((tmp_path / "g.lulc").read_bytes()) == 16 + 4 * 35


def test_ascii_header_is_case_insensitive(tmp_path):
    p = tmp_path / "a.asc"
    p.write_text("NCOLS 2\nNROWS 1\nXLLCORNER 0\nYLLCORNER 0\nCELLSIZE 100\nnodata_value -1\n3 -1\n")
    g = read_esri_ascii(p, 1.0)
    assert g.cells.tolist() == [[3, -1]] and g.nodata_code == -1


@pytest.mark.parametrize("body", ["ncols 2\nnrows 2\n1 2 3\n", "ncols 2\n1 2\n", "ncols 2\nnrows 1\n1 x\n"])
def test_ascii_malformed(tmp_path, body):
    p = tmp_path / "bad.asc"
    p.write_text(body)
    with pytest.raises(RasterFormatError):
        read_esri_ascii(p, 1.0)


def test_binary_malformed(tmp_path):
    p = tmp_path / "bad.lulc"
    p.write_bytes(b"LULC" + b"\x02\x00\x00\x00" * 2 + b"\x00" * 4 + b"\x00" * 12)
    with pytest.raises(RasterFormatError):
        read_binary(p, 1.0)
    p.write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(RasterFormatError):
        read_binary(p, 1.0)


def test_class_scheme_csv(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("source_code,source_name,biome_name\n1,oak,forest\n2,wheat,crop\n3,pine,forest\n")
    s = read_class_scheme(p)
    assert s.biomes == ("forest", "crop")
    assert s.mapping == {1: 0, 2: 1, 3: 0}
    s2 = read_class_scheme(p, ["crop", "forest"])
    assert s2.mapping == {1: 1, 2: 0, 3: 1}
