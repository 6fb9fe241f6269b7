import numpy as np
import pytest
from hypothesis import given, strategies as st

from cstockloss.assisted import synthetic_total_als_fcl
from cstockloss.errors import GridError
from cstockloss.grid import (
    GridRaster,
    aggregate,
    covered_heights,
    load_grid,
    map_total,
    synthetic_map,
    write_grid,
)
from cstockloss.models import AlsFclModel, CstockModelParams, FclModelParams, PanelWindow

NORWAY = CstockModelParams(1.18, 8.57, 0.087)
W = PanelWindow(2018)
NA = np.nan


def grid(values, area=1.0):
    return GridRaster.from_array(np.asarray(values, dtype=float).reshape(1, -1), area)


def test_load_zeros(tmp_path):
    p = tmp_path / "g.grid"
    p.write_text("ncols 2\nnrows 2\ncellarea_ha 1\nnodata -9999\n0 0\n0 0\n")
    g = load_grid(p)
    assert g.values.size == 4 and np.all(g.values == 0)


def test_load_count_mismatch(tmp_path):
    p = tmp_path / "g.grid"
    p.write_text("ncols 2\nnrows 2\ncellarea_ha 1\nnodata -9999\n0 0 0\n")
    with pytest.raises(GridError, match="4 cells"):
        load_grid(p)


def test_load_nodata_preserved(tmp_path):
    p = tmp_path / "g.grid"
    p.write_text("ncols 3\nnrows 1\ncellarea_ha 0.09\nnodata -1\n2015 -1 0\n")
    g = load_grid(p)
    assert np.isnan(g.values[0, 1]) and g.valid.sum() == 2 and g.cell_area == 0.09


@pytest.mark.parametrize(
    "text",
    [
        "ncols 2\nnrows 1\nnodata -9999\n0 0\n",
        "ncols 2 3\nnrows 1\ncellarea_ha 1\nnodata -9999\n0 0\n",
        "ncols two\nnrows 1\ncellarea_ha 1\nnodata -9999\n0 0\n",
        "ncols 2\nnrows 1\ncellarea_ha 0\nnodata -9999\n0 0\n",
    ],
)
def test_load_malformed_header(tmp_path, text):
    p = tmp_path / "g.grid"
    p.write_text(text)
    with pytest.raises(GridError):
        load_grid(p)


def test_write_round_trip(tmp_path):
    g = GridRaster.from_array([[2015, NA, 0], [1.5, 2.25, -3]], 0.5)
    write_grid(g, tmp_path / "g.grid")
    again = load_grid(tmp_path / "g.grid")
    assert np.array_equal(again.values, g.values, equal_nan=True) and again.cell_area == 0.5


# --- aggregate ----------------------------------------------------------------------------


FCL4 = [2015, 2013, 0, 2016]


def test_aggregate_fcl_only():
    a = aggregate(grid(FCL4), w=W)
    assert (a.lam, a.lam_cl, a.lam_n, a.lam_l, a.xbar_l) == (4, 2, 2, 0, None)


def test_aggregate_with_als():
    a = aggregate(grid(FCL4), grid([10, NA, NA, 14]), grid([2012] * 4), W)
    assert (a.lam_l, a.lam_cl, a.lam_n, a.xbar_l) == (2, 0, 2, 12.0)


def test_aggregate_all_no_loss():
    a = aggregate(grid([0, 0, 0]), w=W)
    assert a.lam_n == a.lam == 3 and a.lam_cl == 0 and a.lam_l == 0


def test_aggregate_excludes_nodata():
    a = aggregate(grid([2015, NA, 0], area=2.0), w=W)
    assert a.lam == 4.0


def test_aggregate_ineligible_als_counts_as_cl():
    a = aggregate(grid(FCL4), grid([10, NA, NA, 14]), grid([2014, NA, NA, 2012]), W)
    assert (a.lam_l, a.lam_cl, a.xbar_l) == (1, 1, 14.0)


def test_aggregate_errors():
    with pytest.raises(GridError, match="differ"):
        aggregate(grid(FCL4), grid([1, 2, 3]), grid([1, 2, 3]), W)
    with pytest.raises(GridError, match="together"):
        aggregate(grid(FCL4), grid([1, 2, 3, 4]), None, W)
    with pytest.raises(GridError, match="no height"):
        aggregate(grid(FCL4), grid([NA] * 4), grid([2012] * 4), W)


cells = st.lists(
    st.tuples(
        st.one_of(st.just(NA), st.just(0.0), st.integers(2005, 2020).map(float)),
        st.floats(0, 30),
        st.one_of(st.just(NA), st.integers(2005, 2016).map(float)),
    ),
    min_size=1,
    max_size=40,
)


def _grids(rows, area=0.25):
    f = grid([r[0] for r in rows], area)
    h = grid([r[1] if not np.isnan(r[2]) else NA for r in rows], area)
    y = grid([r[2] for r in rows], area)
    return f, h, y


@given(cells, st.sampled_from([W, PanelWindow.pooled(2014, 2018), PanelWindow(2012)]))
def test_aggregate_partition(rows, w):
    f, h, y = _grids(rows)
    if f.valid.sum() == 0:
        return
    a = aggregate(f, h, y, w)
    assert a.lam_cl + a.lam_n + a.lam_l == a.lam == 0.25 * f.valid.sum()


@given(cells, st.randoms(use_true_random=False))
def test_aggregate_permutation_invariant(rows, rnd):
    f, h, y = _grids(rows)
    if f.valid.sum() == 0:
        return
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    a, b = aggregate(f, h, y, W), aggregate(*_grids(shuffled), W)
    assert (a.lam, a.lam_cl, a.lam_n, a.lam_l) == (b.lam, b.lam_cl, b.lam_n, b.lam_l)
    if a.xbar_l is not None:
        assert a.xbar_l == pytest.approx(b.xbar_l, rel=1e-12)


@given(cells)
def test_xbar_matches_covered_heights(rows):
    f, h, y = _grids(rows)
    if f.valid.sum() == 0:
        return
    a = aggregate(f, h, y, W)
    hs = covered_heights(f, h, y, W)
    assert len(hs) * 0.25 == a.lam_l
    if len(hs):
        assert a.xbar_l == pytest.approx(hs.mean(), rel=1e-12)


# --- synthetic map ---------------------------------------------------------------------------


def test_map_values():
    model = AlsFclModel(NORWAY, FclModelParams(17.15, 0.32))
    g = synthetic_map(grid([0, 2016, 2016, NA]), grid([NA, 10, NA, NA]), grid([NA, 2012, NA, NA]), model, W)
    v = g.values.ravel()
    assert v[0] == 0.32 and v[1] == pytest.approx(19.116) and v[2] == 17.15 and np.isnan(v[3])


def test_map_fcl_model():
    g = synthetic_map(grid([0, 2016]), None, None, FclModelParams(17.15, 0.32), W)
    assert g.values.ravel().tolist() == [0.32, 17.15]


@given(cells)
def test_map_total_equals_pixel_sum_synthetic(rows):
    f, h, y = _grids(rows)
    if f.valid.sum() == 0:
        return
    model = AlsFclModel(NORWAY, FclModelParams(17.15, 0.32))
    a = aggregate(f, h, y, W)
    want = synthetic_total_als_fcl(a, model, pixel_heights=covered_heights(f, h, y, W) if a.lam_l else None)
    assert map_total(synthetic_map(f, h, y, model, W)) == pytest.approx(want, rel=1e-10, abs=1e-10)
