import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cstockloss.assisted import (
    PopulationAggregates,
    ResidualSample,
    best_combination,
    load_aggregates,
    ma_total,
    relative_efficiency,
    relative_efficiency_from_se,
    residual_arrays,
    residuals,
    save_aggregates,
    synthetic_total_als_fcl,
    synthetic_total_fcl,
)
from cstockloss.design import EstimateResult, EstimatorTag, average_annual, be_estimate
from cstockloss.errors import EstimationError, InputError
from cstockloss.models import AlsFclModel, CstockModelParams, FclModelParams, PanelWindow
from cstockloss.survey import ClusterPlot, DomainSelector, SubPlotRecord, cluster_domain_mean, to_arrays

import oracles

NORWAY = CstockModelParams(1.18, 8.57, 0.087)
W = PanelWindow(2018)


def plot_with(y, flags, cid="c"):
    subs = [SubPlotRecord(cid, j, v, {"forest": f}) for j, (v, f) in enumerate(zip(y, flags))]
    return ClusterPlot(cid, 2018, "A", subs)


def residual_of(y, yhat, ind):
    # Residual definition applied directly, model-free.
    return sum((a - b) for a, b, i in zip(y, yhat, ind) if i) / len(y)


# --- residuals ------------------------------------------------------------------------------


def test_perfect_model_zero_residuals():
    p = plot_with([0.5, 0.5, 0.5], [True] * 3)
    res = residuals([p], FclModelParams(1.0, 0.5), DomainSelector(), W)
    assert res.e.tolist() == [0.0]


def test_residual_examples_via_fcl_model():
    # y=[2,4]; sub-plot 0 unflagged (pred 1), sub-plot 1 flagged (pred 5)
    subs = [SubPlotRecord("c", 0, 2.0, {"forest": True}),
            SubPlotRecord("c", 1, 4.0, {"forest": False}, fcl_loss_year=2017)]
    p = ClusterPlot("c", 2018, "A", subs)
    model = FclModelParams(ybar_cl=5.0, ybar_n=1.0)
    assert residuals([p], model, DomainSelector(), W).e.tolist() == [0.0]
    assert residuals([p], model, DomainSelector("forest"), W).e.tolist() == [0.5]
    assert residual_of([2, 4], [1, 5], [1, 1]) == 0.0
    assert residual_of([2, 4], [1, 5], [1, 0]) == 0.5


def test_residual_sample_rejects_nonfinite():
    with pytest.raises(EstimationError):
        ResidualSample(np.ones(2), np.array([0.0, np.inf]))


# --- synthetic totals -------------------------------------------------------------------------


def test_synthetic_fcl_example():
    a = PopulationAggregates(lam=100, lam_cl=5, lam_n=95)
    assert synthetic_total_fcl(a, FclModelParams(10.0, 0.5)) == 97.5


def test_synthetic_fcl_constant_model():
    a = PopulationAggregates(lam=100, lam_cl=5, lam_n=95)
    assert synthetic_total_fcl(a, FclModelParams(0.25, 0.25)) == 25.0


def test_synthetic_fcl_no_loss_area():
    a = PopulationAggregates(lam=100, lam_cl=0, lam_n=100)
    assert synthetic_total_fcl(a, FclModelParams(10.0, 0.5)) == 50.0


def test_synthetic_als_example():
    model = AlsFclModel(NORWAY, FclModelParams(0.0, 0.0))
    a = PopulationAggregates(lam=2, lam_cl=0, lam_n=0, lam_l=2, xbar_l=12.0)
    g = oracles.quadratic(("1.18", "8.57", "0.087"), 12)
    assert float(g) == pytest.approx(116.548, rel=1e-12)
    assert float(2 * g / 5) == pytest.approx(46.6192, rel=1e-12)
    assert synthetic_total_als_fcl(a, model) == pytest.approx(float(2 * g / 5), rel=1e-10)
    assert synthetic_total_als_fcl(a, model, strict_appendix=True) == pytest.approx(float(2 * g), rel=1e-10)


def test_synthetic_als_without_als_area_is_fcl():
    fcl = FclModelParams(10.0, 0.5)
    a = PopulationAggregates(lam=100, lam_cl=5, lam_n=95, lam_l=0)
    assert synthetic_total_als_fcl(a, AlsFclModel(NORWAY, fcl)) == synthetic_total_fcl(a, fcl)


@given(st.floats(0, 40), st.integers(1, 50))
def test_pixel_sum_at_mean_equals_aggregate(h, k):
    model = AlsFclModel(NORWAY, FclModelParams(3.0, 0.2))
    a = PopulationAggregates(lam=10, lam_cl=1, lam_n=7, lam_l=2, xbar_l=h)
    assert synthetic_total_als_fcl(a, model, pixel_heights=[h] * k) == pytest.approx(
        synthetic_total_als_fcl(a, model), rel=1e-12
    )


def test_pixel_sum_clamps_per_pixel():
    sweden = AlsFclModel(CstockModelParams(-69.21, 28.67, 0.07), FclModelParams(0, 0))
    a = PopulationAggregates(lam=2, lam_cl=0, lam_n=0, lam_l=2, xbar_l=10.5)
    got = synthetic_total_als_fcl(a, sweden, pixel_heights=[1.0, 20.0])
    want = 2 * (0.0 + float(sweden.cstock.stock(20.0)) / 5) / 2
    assert got == pytest.approx(want)


def test_synthetic_als_missing_xbar():
    with pytest.raises(InputError, match="xbar_l"):
        PopulationAggregates(lam=2, lam_cl=0, lam_n=0, lam_l=2)


# --- aggregates --------------------------------------------------------------------------------


def test_aggregates_partition_enforced():
    with pytest.raises(InputError, match="add up"):
        PopulationAggregates(lam=100, lam_cl=5, lam_n=94)
    with pytest.raises(InputError, match="add up"):
        PopulationAggregates(lam=100, lam_cl=5, lam_n=90, lam_l=4, xbar_l=3.0)
    with pytest.raises(InputError, match="xbar_l given"):
        PopulationAggregates(lam=100, lam_cl=5, lam_n=95, xbar_l=3.0)


def test_aggregates_round_trip(tmp_path):
    aggs = [
        PopulationAggregates(100, 5, 90, 5, 11.25, "S1", PanelWindow(2018)),
        PopulationAggregates(100, 9, 91, None, None, "S1", PanelWindow.pooled(2014, 2018)),
    ]
    save_aggregates(tmp_path / "a.json", aggs)
    assert load_aggregates(tmp_path / "a.json") == aggs


def test_aggregates_bad_record(tmp_path):
    (tmp_path / "a.json").write_text('[{"lam": 1, "lam_cl": 0}]')
    with pytest.raises(InputError, match="bad aggregates"):
        load_aggregates(tmp_path / "a.json")


# --- ma_total -----------------------------------------------------------------------------------


def test_ma_perfect_model():
    r = ma_total(97.5, ResidualSample(np.ones(3), np.zeros(3)), 100)
    assert (r.total, r.variance) == (97.5, 0.0)


def test_ma_example():
    r = ma_total(97.5, ResidualSample(np.ones(2), np.array([0.1, -0.1])), 100)
    _, v = oracles.be([1, 1], ["0.1", "-0.1"], 100)
    assert r.total == 97.5
    assert float(v) == 100.0
    assert r.variance == pytest.approx(float(v), rel=1e-10)


def test_ma_needs_two():
    with pytest.raises(EstimationError, match="variance undefined"):
        ma_total(1.0, ResidualSample(np.ones(1), np.zeros(1)), 1.0)


y_lists = st.lists(st.lists(st.floats(0, 100), min_size=4, max_size=4), min_size=2, max_size=12)


@given(y_lists, st.floats(1, 1e6))
def test_constant_mean_model_reproduces_be(clusters, area):
    plots = [plot_with(ys, [True] * 4, f"c{i}") for i, ys in enumerate(clusters)]
    allys = [v for ys in clusters for v in ys]
    ybar = float(oracles.ratio_mean([1] * len(allys), allys))
    model = FclModelParams(ybar, ybar)
    a = PopulationAggregates(lam=area, lam_cl=0, lam_n=area)
    ma = ma_total(synthetic_total_fcl(a, model), residuals(plots, model, DomainSelector(), W), area)
    m = [p.m for p in plots]
    be = be_estimate(m, [cluster_domain_mean(p) for p in plots], area)
    t, v = oracles.be(m, [oracles.cluster_mean(ys, [1] * 4) for ys in clusters], area)
    assert ma.total == pytest.approx(float(t), rel=1e-9, abs=1e-6)
    assert be.total == pytest.approx(float(t), rel=1e-9, abs=1e-6)
    assert ma.variance == pytest.approx(be.variance, rel=1e-7, abs=1e-6)


@given(
    st.lists(st.tuples(st.integers(1, 6), st.floats(-50, 50)), min_size=2, max_size=15),
    st.floats(-20, 20),
    st.floats(1, 1000),
)
def test_joint_shift_invariance(pairs, c, area):
    m = np.array([a for a, _ in pairs], dtype=float)
    e = np.array([b for _, b in pairs])
    base = ma_total(10.0, ResidualSample(m, e), area)
    # Predictions +c: residuals -c, synthetic total +c*area.
    shifted = ma_total(10.0 + c * area, ResidualSample(m, e - c), area)
    assert shifted.total == pytest.approx(base.total, rel=1e-9, abs=1e-6 * area)
    assert shifted.variance == pytest.approx(base.variance, rel=1e-6, abs=1e-6 * area**2)


# --- relative efficiency ---------------------------------------------------------------------------


def test_re_examples():
    assert relative_efficiency(EstimateResult(1, 4, 2), EstimateResult(1, 2, 2)) == 2.0
    assert relative_efficiency(EstimateResult(1, 3, 2), EstimateResult(5, 3, 2)) == 1.0
    with pytest.raises(EstimationError, match="zero"):
        relative_efficiency(EstimateResult(1, 4, 2), EstimateResult(1, 0, 2))


def test_re_from_published_norway():
    assert relative_efficiency_from_se(9.06, 9.17, 9.05, 6.53) == pytest.approx(1.98, abs=0.01)


@given(st.floats(1e-6, 1e6), st.floats(1e-6, 1e6), st.floats(1e-3, 1e3))
def test_re_direction_and_scale(v_be, v_ma, c):
    be, ma = EstimateResult(1, v_be, 2), EstimateResult(1, v_ma, 2)
    re = relative_efficiency(be, ma)
    assert (re > 1) == (v_ma < v_be)
    scaled = relative_efficiency(EstimateResult(c, c * c * v_be, 2), EstimateResult(c, c * c * v_ma, 2))
    assert scaled == pytest.approx(re, rel=1e-9)


def test_re_invariant_under_rescaled_data():
    rng = np.random.default_rng(3)
    m = np.full(10, 4.0)
    y = rng.exponential(1.0, 10)
    e = y - 0.8 * y.mean() - rng.normal(0, 0.1, 10)
    base = relative_efficiency(be_estimate(m, y, 50), ma_total(7.0, ResidualSample(m, e), 50))
    c = 3.7
    scaled = relative_efficiency(be_estimate(m, c * y, 50), ma_total(7.0 * c, ResidualSample(m, c * e), 50))
    assert scaled == pytest.approx(base, rel=1e-12)


# --- BEST ---------------------------------------------------------------------------------------------


def _cand(model, total, var, year=None, n=10):
    est = "BE" if model is None else "MA"
    return EstimateResult(total, var, n, EstimatorTag(est, model, "annual", year))


def test_best_picks_smallest_variance():
    r = best_combination({2018: [_cand("FCL", 1, 3), _cand("ALS-FCL", 2, 2)]})
    assert (r.total, r.variance) == (2, 2)
    assert (r.tag.estimator, r.tag.model) == ("MA", "BEST")


def test_best_single_candidates_equal_average():
    per_year = {t: [_cand("FCL", t - 2000, 1.5)] for t in (2015, 2016)}
    best = best_combination(per_year)
    avg = average_annual({t: c[0] for t, c in per_year.items()})
    assert (best.total, best.variance) == (avg.total, avg.variance)


def test_best_tie_priority():
    r = best_combination({2018: [_cand(None, 1, 2), _cand("FCL", 2, 2), _cand("ALS-FCL", 3, 2)]})
    assert r.total == 3
    r = best_combination({2018: [_cand(None, 1, 2), _cand("FCL", 2, 2)]})
    assert r.total == 2


def test_best_norway_like():
    # 2014 has no ALS-FCL candidate; later years do and it wins.
    per_year = {2014: [_cand(None, 10, 9), _cand("FCL", 10, 5)]}
    for t in (2015, 2016, 2017, 2018):
        per_year[t] = [_cand(None, 10, 9), _cand("FCL", 10, 5), _cand("ALS-FCL", 10, 4)]
    chosen = {}
    for t, cands in per_year.items():
        chosen[t] = min(cands, key=lambda r: r.variance).tag.model
    assert chosen[2014] == "FCL" and all(chosen[t] == "ALS-FCL" for t in range(2015, 2019))
    r = best_combination(per_year)
    assert r.variance == pytest.approx((100 * 5 + 4 * 100 * 4) / 50**2)


def test_best_empty_year():
    with pytest.raises(EstimationError, match="2017"):
        best_combination({2017: []})


# --- object path vs array path -------------------------------------------------------------------------


def test_residual_object_and_array_paths_agree():
    from cstockloss.simulation import PopulationConfig, StratumConfig, draw_sample, generate_population

    cfg = PopulationConfig(strata=(StratumConfig(n_clusters=400),), loss_prevalence=0.05, seed=11)
    ds = draw_sample(generate_population(cfg), "srs", 100, seed=1)
    model = AlsFclModel(NORWAY, FclModelParams(15.0, 0.3))
    plots = [p for p in ds.plots if p.panel_year == 2018]
    obj = residuals(plots, model, DomainSelector("forest"), W)
    arr = residual_arrays(to_arrays(plots, DomainSelector("forest")), model, W)
    assert np.allclose(obj.e, arr.e, rtol=0, atol=1e-12)
    from cstockloss.models import predict_subplot

    manual = [
        sum(s.c_loss - predict_subplot(s, model, W) for s in p.subplots if s.domain_flags["forest"]) / p.m
        for p in plots
    ]
    assert np.allclose(obj.e, manual, rtol=1e-12, atol=1e-12)
    assert all(math.isfinite(v) for v in obj.e)
