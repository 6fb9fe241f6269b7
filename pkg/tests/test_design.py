import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cstockloss.design import (
    EstimateResult,
    EstimatorTag,
    average_annual,
    be_annual,
    be_estimate,
    be_total,
    be_variance,
    ratio_mean,
    stratified_combine,
)
from cstockloss.errors import EstimationError

import oracles

REL = 1e-10


def close(a, b):
    return a == pytest.approx(float(b), rel=REL, abs=1e-300)


# --- be_total -----------------------------------------------------------------------


def test_be_total_weighted_example():
    mean, total = be_total([4, 2], [2, 5], 100)
    ref = oracles.ratio_mean([4, 2], [2, 5])
    assert close(mean, ref) and close(total, 100 * ref)
    assert (mean, total) == (3.0, 300.0)


def test_be_total_unit_m():
    assert be_total([1, 1, 1], [1, 2, 3], 10)[1] == 20.0


def test_be_total_constant():
    assert be_total([3, 1, 2], [0.7] * 3, 40)[1] == pytest.approx(28.0)


def test_be_total_empty():
    with pytest.raises(EstimationError, match="no plots in stratum/panel"):
        be_total([], [], 1.0)


# --- be_variance --------------------------------------------------------------------


def test_be_variance_example():
    v_mean, v_total = be_variance([1, 1], [1, 3], 1)
    assert close(v_mean, oracles.ratio_mean_variance([1, 1], [1, 3]))
    assert v_mean == 1.0 and v_total == 1.0


def test_be_variance_constant_sample():
    assert be_variance([2, 3, 1], [4.0, 4.0, 4.0], 7)[1] == 0.0


def test_be_variance_equal_m_scale_free():
    assert be_variance([2, 2], [1, 3], 5) == be_variance([1, 1], [1, 3], 5)


def test_be_variance_needs_two():
    with pytest.raises(EstimationError, match="variance undefined"):
        be_variance([1], [1.0], 1)


samples = st.integers(2, 12).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(1, 10), min_size=n, max_size=n),
        st.lists(st.integers(0, 50), min_size=n, max_size=n),
    )
)


@given(samples, st.integers(1, 10_000))
def test_be_matches_rational_oracle(sample, area):
    m, y = sample
    est = be_estimate(m, y, area)
    t, v = oracles.be(m, y, area)
    assert est.total == pytest.approx(float(t), rel=REL, abs=1e-9)
    assert est.variance == pytest.approx(float(v), rel=1e-9, abs=1e-9)


@given(samples, st.floats(-100, 100), st.floats(0.01, 100))
def test_be_variance_translation_and_scale(sample, shift, c):
    m, y = sample
    y = np.asarray(y, dtype=float)
    v = be_variance(m, y, 3.0)[1]
    assert be_variance(m, y + shift, 3.0)[1] == pytest.approx(v, rel=1e-6, abs=1e-6)
    assert be_variance(m, c * y, 3.0)[1] == pytest.approx(c * c * v, rel=1e-9, abs=1e-9)


# --- be_annual / average_annual ------------------------------------------------------------


def test_be_annual_two_panels():
    res = be_annual({2017: ([1, 1], [2, 4]), 2018: ([1, 1], [2, 4])}, 10)
    assert [r.total for r in res.values()] == [30.0, 30.0]
    assert res[2018].tag.year == 2018 and res[2018].tag.scope == "annual"


def test_be_annual_single_panel_equals_pooled():
    m, y = [3, 2, 4], [1.5, 0.0, 2.0]
    assert be_annual({2018: (m, y)}, 9)[2018].total == be_estimate(m, y, 9).total
    assert be_annual({2018: (m, y)}, 9)[2018].variance == be_estimate(m, y, 9).variance


def test_be_annual_error_names_year():
    with pytest.raises(EstimationError, match="panel 2016"):
        be_annual({2015: ([1, 1], [1, 2]), 2016: ([1], [3])}, 1)


def _res(total, var, n=1):
    return EstimateResult(total=total, variance=var, n=n)


def test_average_equal_weights():
    avg = average_annual({1: _res(10, 4), 2: _res(20, 4)}, {1: 1, 2: 1})
    t, v = oracles.average([10, 20], [4, 4], [1, 1])
    assert (avg.total, avg.variance) == (float(t), float(v)) == (15.0, 2.0)


def test_average_unequal_weights():
    avg = average_annual({1: _res(10, 0), 2: _res(20, 0)}, {1: 1, 2: 3})
    assert avg.total == float(oracles.average([10, 20], [0, 0], [1, 3])[0]) == 17.5


def test_average_single_year_identity():
    avg = average_annual({2018: _res(12.5, 3.0, 7)})
    assert (avg.total, avg.variance, avg.n) == (12.5, 3.0, 7)


def test_average_mismatched_years():
    with pytest.raises(EstimationError, match="year sets differ"):
        average_annual({1: _res(1, 1)}, {2: 1})


def test_pooled_equals_average_with_equal_panels():
    # Equal panel sizes and constant m: the two estimators coincide.
    rng = np.random.default_rng(1)
    y = rng.exponential(2.0, size=(5, 6))
    m = np.full(6, 4)
    pooled = be_estimate(np.tile(m, 5), y.ravel(), 50.0)
    annual = be_annual({t: (m, y[t]) for t in range(5)}, 50.0)
    avg = average_annual(annual)
    assert avg.total == pytest.approx(pooled.total, rel=1e-12)


def test_pooled_and_average_differ_with_unequal_m():
    # Recorded, not asserted equal.
    m = {0: [1, 5], 1: [4, 4]}
    y = {0: [1.0, 3.0], 1: [2.0, 0.0]}
    avg = average_annual(be_annual({t: (m[t], y[t]) for t in m}, 1.0))
    pooled = be_estimate(m[0] + m[1], y[0] + y[1], 1.0)
    assert math.isfinite(avg.total) and math.isfinite(pooled.total)
    assert avg.total != pooled.total


# --- stratified_combine ---------------------------------------------------------------


def _tagged(total, var, stratum):
    return EstimateResult(total, var, 2, EstimatorTag(stratum=stratum))


def test_combine_two():
    c = stratified_combine([_tagged(10, 1, "a"), _tagged(20, 4, "b")])
    assert (c.total, c.variance, c.tag.stratum) == (30, 5, "combined")


def test_combine_single_identity():
    r = _tagged(10, 1, "a")
    assert stratified_combine([r]) is r


def test_combine_three_se_pct():
    c = stratified_combine([_tagged(1, 1, s) for s in "abc"])
    assert (c.total, c.variance) == (3, 3)
    assert c.se_pct == pytest.approx(100 * math.sqrt(3) / 3, rel=REL)
    assert round(c.se_pct, 2) == 57.74


def test_combine_mixed_tags():
    other = EstimateResult(1, 1, 2, EstimatorTag(estimator="MA", model="FCL", stratum="b"))
    with pytest.raises(EstimationError, match="different estimators"):
        stratified_combine([_tagged(1, 1, "a"), other])


# --- EstimateResult ---------------------------------------------------------------------


def test_se_pct_absent_for_zero_total():
    assert EstimateResult(0.0, 1.0, 2).se_pct is None


def test_negative_variance_rejected():
    with pytest.raises(EstimationError):
        EstimateResult(1.0, -1e-3, 2)


# --- exhaustive enumeration ----------------------------------------------------------------


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_design_unbiased_constant_m(n):
    rng = np.random.default_rng(n)
    y = rng.integers(0, 30, size=8)
    m = np.full(8, 3)
    samples = list(itertools.combinations(range(8), n))
    means = [oracles.ratio_mean(m[list(s)], y[list(s)]) for s in samples]
    assert sum(means) / len(samples) == oracles.ratio_mean(m, y)
    floats = np.mean([ratio_mean(m[list(s)], y[list(s)]) for s in samples])
    assert abs(floats / float(oracles.ratio_mean(m, y)) - 1) <= 1e-12


def test_unequal_m_bias_is_small():
    rng = np.random.default_rng(2)
    y = rng.uniform(0, 10, size=8)
    m = rng.integers(1, 5, size=8)
    truth = float(oracles.ratio_mean(m, y))
    est = np.mean([ratio_mean(m[list(s)], y[list(s)]) for s in itertools.combinations(range(8), 4)])
    # Ratio estimator: small but nonzero design bias.
    assert abs(est / truth - 1) < 0.1
