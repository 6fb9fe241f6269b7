"""Basic-expansion (field data only) totals and variances.

All estimators take per-cluster sub-plot counts ``m`` and cluster values ``y``
(domain means as produced by :func:`cstockloss.survey.cluster_domain_mean`).
The mean is the ratio ``sum(m*y) / sum(m)``, i.e. the mean over sub-plots,
and the variance treats the (systematic) sample as simple random, so it is
conservative for systematic grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from cstockloss.errors import EstimationError

# Lower number wins ties in per-year selection.
MODEL_PRIORITY = {"ALS-FCL": 0, "FCL": 1, None: 2}


@dataclass(frozen=True)
class EstimatorTag:
    """Provenance of an estimate."""

    estimator: str = "BE"  # BE | MA
    model: Optional[str] = None  # FCL | ALS-FCL | BEST | None
    scope: str = "pooled"  # annual | pooled | average
    year: Optional[int] = None
    stratum: Optional[str] = None
    domain: str = "all"

    @property
    def label(self) -> str:
        return self.estimator if self.model is None else f"{self.estimator}-{self.model}"


@dataclass(frozen=True)
class EstimateResult:
    total: float
    variance: float
    n: int
    tag: EstimatorTag = EstimatorTag()
    mean: Optional[float] = None

    def __post_init__(self):
        if not self.variance >= 0:
            raise EstimationError(f"negative or undefined variance {self.variance}")

    @property
    def se(self) -> float:
        return math.sqrt(self.variance)

    @property
    def se_pct(self) -> Optional[float]:
        if self.total == 0:
            return None
        return 100.0 * self.se / abs(self.total)


def _prepare(m, y):
    m = np.asarray(m, dtype=float)
    y = np.asarray(y, dtype=float)
    if m.shape != y.shape or m.ndim != 1:
        raise ValueError("m and y must be 1-d arrays of equal length")
    return m, y


def ratio_mean(m, y) -> float:
    m, y = _prepare(m, y)
    if len(m) == 0:
        raise EstimationError("no plots in stratum/panel")
    return float(np.dot(m, y) / m.sum())


def ratio_mean_variance(m, y) -> float:
    """Variance of the sub-plot mean: ``sum((m/mbar)^2 (y - Y)^2) / (n(n-1))``."""
    m, y = _prepare(m, y)
    n = len(m)
    if n < 2:
        raise EstimationError(f"variance undefined for n={n} plots (need n >= 2)")
    mean = np.dot(m, y) / m.sum()
    w = m / m.mean()
    return float(np.sum((w * (y - mean)) ** 2) / (n * (n - 1)))


def be_total(m, y, area: float) -> tuple:
    """Return ``(mean, total)`` with total = area * mean."""
    if not area > 0:
        raise ValueError("area must be > 0")
    mean = ratio_mean(m, y)
    return mean, area * mean


def be_variance(m, y, area: float) -> tuple:
    """Return ``(V(mean), V(total))``."""
    v = ratio_mean_variance(m, y)
    return v, area**2 * v


def be_estimate(m, y, area: float, tag: EstimatorTag = EstimatorTag()) -> EstimateResult:
    mean, total = be_total(m, y, area)
    _, var = be_variance(m, y, area)
    return EstimateResult(total=total, variance=var, n=len(np.atleast_1d(m)), tag=tag, mean=mean)


def be_annual(panels: Mapping[int, tuple], area: float, tag: EstimatorTag = EstimatorTag()) -> dict:
    """Annual estimates from ``{year: (m, y)}``."""
    out = {}
    for year, (m, y) in sorted(panels.items()):
        try:
            out[year] = be_estimate(m, y, area, replace(tag, scope="annual", year=year))
        except EstimationError as exc:
            raise EstimationError(f"panel {year}: {exc}") from None
    return out


def average_annual(
    results: Mapping[int, EstimateResult], n_t: Optional[Mapping[int, int]] = None
) -> EstimateResult:
    """Plot-count weighted average of annual estimates.

    ``n_t`` defaults to each result's own ``n``. Weights are cluster counts.
    """
    if n_t is None:
        n_t = {t: r.n for t, r in results.items()}
    if set(results) != set(n_t):
        raise EstimationError(
            f"year sets differ: estimates {sorted(results)} vs counts {sorted(n_t)}"
        )
    years = sorted(results)
    n_p = sum(n_t[t] for t in years)
    if not years or n_p <= 0:
        raise EstimationError("no plots to average over")
    total = sum(n_t[t] * results[t].total for t in years) / n_p
    var = sum(n_t[t] ** 2 * results[t].variance for t in years) / n_p**2

    tags = {results[t].tag for t in years}
    first = results[years[0]].tag
    models = {tg.model for tg in tags}
    if len(years) == 1:
        model = first.model
    else:
        model = models.pop() if len(models) == 1 else "BEST"
    estimators = {tg.estimator for tg in tags}
    tag = replace(
        first,
        estimator=estimators.pop() if len(estimators) == 1 else "MA",
        model=model,
        scope="average",
        year=None,
    )
    return EstimateResult(total=total, variance=var, n=n_p, tag=tag)


def stratified_combine(per_stratum: Sequence[EstimateResult]) -> EstimateResult:
    """Sum totals and variances of independent strata."""
    if not per_stratum:
        raise EstimationError("nothing to combine")
    keys = {replace(r.tag, stratum=None) for r in per_stratum}
    if len(keys) != 1:
        raise EstimationError(f"cannot combine different estimators: {sorted(k.label for k in keys)}")
    if len(per_stratum) == 1:
        return per_stratum[0]
    return EstimateResult(
        total=sum(r.total for r in per_stratum),
        variance=sum(r.variance for r in per_stratum),
        n=sum(r.n for r in per_stratum),
        tag=replace(keys.pop(), stratum="combined"),
    )
