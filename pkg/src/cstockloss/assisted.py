"""Model-assisted (difference) estimation.

The estimate is the synthetic total of a working model over the population
plus a basic-expansion estimate of the total model residual. The residual
correction removes the model's systematic error in expectation, so the
estimator stays approximately design-unbiased however poorly the model fits;
a good model only buys precision.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from cstockloss.design import (
    MODEL_PRIORITY,
    EstimateResult,
    EstimatorTag,
    average_annual,
    ratio_mean,
    ratio_mean_variance,
)
from cstockloss.errors import EstimationError, InputError
from cstockloss.models import (
    AlsFclModel,
    FclModelParams,
    PanelWindow,
    WorkingModel,
    als_eligible_array,
    predict_arrays,
    recode_fcl_array,
)
from cstockloss.survey import DomainSelector, SubplotArrays, cluster_means, to_arrays

_REL_TOL = 1e-9


@dataclass(frozen=True)
class PopulationAggregates:
    """Known areas (ha) for one stratum and panel window.

    ``lam_cl`` is mapped loss without usable ALS, ``lam_l`` mapped loss with
    usable ALS (mean height ``xbar_l``), ``lam_n`` the remaining area.
    """

    lam: float
    lam_cl: float
    lam_n: float
    lam_l: Optional[float] = None
    xbar_l: Optional[float] = None
    stratum_id: Optional[str] = None
    window: Optional[PanelWindow] = None

    def __post_init__(self):
        parts = [self.lam_cl, self.lam_n] + ([self.lam_l] if self.lam_l is not None else [])
        if any(p < 0 for p in parts) or not self.lam > 0:
            raise InputError("areas must be non-negative and lambda > 0")
        if not math.isclose(sum(parts), self.lam, rel_tol=_REL_TOL, abs_tol=1e-9):
            raise InputError(
                f"area parts {sum(parts)} do not add up to lambda {self.lam}"
            )
        if self.lam_l is not None and self.lam_l > 0 and self.xbar_l is None:
            raise InputError("xbar_l is required when lam_l > 0")
        if self.xbar_l is not None and not (self.lam_l or 0) > 0:
            raise InputError("xbar_l given without ALS-covered loss area")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = None if self.window is None else asdict(self.window)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "PopulationAggregates":
        d = dict(d)
        if d.get("window") is not None:
            d["window"] = PanelWindow(**d["window"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InputError(f"bad aggregates record: {exc}") from None


def save_aggregates(path, aggregates: Sequence[PopulationAggregates]) -> None:
    Path(path).write_text(
        json.dumps([a.to_dict() for a in aggregates], indent=2) + "\n", encoding="utf-8"
    )


def load_aggregates(path) -> list:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None
    if isinstance(raw, dict):
        raw = [raw]
    return [PopulationAggregates.from_dict(r) for r in raw]


@dataclass(frozen=True)
class ResidualSample:
    m: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.e)):
            raise EstimationError("non-finite residual")

    @property
    def n(self) -> int:
        return len(self.m)


def residual_arrays(arr: SubplotArrays, model: WorkingModel, w: PanelWindow) -> ResidualSample:
    flags = recode_fcl_array(arr.fcl_year, w)
    eligible = als_eligible_array(arr.als_year, w)
    yhat = predict_arrays(flags, eligible, arr.als_height, model)
    e_ij = np.where(arr.indicator, arr.y - yhat, 0.0)
    return ResidualSample(m=arr.m, e=cluster_means(arr.cluster, e_ij, arr.m))


def residuals(plots, model: WorkingModel, d: DomainSelector, w: PanelWindow) -> ResidualSample:
    """Per-cluster residual means; the domain indicator zeroes both the
    observation and the prediction of out-of-domain sub-plots."""
    return residual_arrays(to_arrays(plots, d), model, w)


def synthetic_total_fcl(a: PopulationAggregates, p: FclModelParams) -> float:
    lam_cl = a.lam_cl + (a.lam_l or 0.0)
    return a.lam_n * p.ybar_n + lam_cl * p.ybar_cl


def synthetic_total_als_fcl(
    a: PopulationAggregates,
    model: AlsFclModel,
    pixel_heights=None,
    strict_appendix: bool = False,
) -> float:
    """Synthetic total of the ALS-FCL model.

    By default the ALS term is ``lam_l * g(xbar_l) / interval``. With
    ``pixel_heights`` the term is the sum of per-pixel predictions over
    ``lam_l`` instead (no evaluation at the mean height). ``strict_appendix``
    drops the annualization of the ALS term.
    """
    lam_l = a.lam_l or 0.0
    rest = a.lam_n * model.fcl.ybar_n + a.lam_cl * model.fcl.ybar_cl
    if lam_l == 0:
        return rest
    divisor = 1 if strict_appendix else model.interval_years
    if pixel_heights is not None:
        h = np.asarray(pixel_heights, dtype=float)
        if h.size == 0:
            raise InputError("empty pixel height list with lam_l > 0")
        per_pixel = model.cstock.stock(h) / divisor
        if model.clamp_negative:
            per_pixel = np.maximum(per_pixel, 0.0)
        return rest + lam_l * float(per_pixel.mean())
    if a.xbar_l is None:
        raise InputError("xbar_l is required when lam_l > 0")
    g = float(model.cstock.stock(a.xbar_l)) / divisor
    if model.clamp_negative:
        g = max(g, 0.0)
    return rest + lam_l * g


def ma_total(
    synthetic: float, res: ResidualSample, area: float, tag: EstimatorTag = EstimatorTag("MA")
) -> EstimateResult:
    correction = area * ratio_mean(res.m, res.e)
    var = area**2 * ratio_mean_variance(res.m, res.e)
    return EstimateResult(total=synthetic + correction, variance=var, n=res.n, tag=tag)


def relative_efficiency(be: EstimateResult, ma: EstimateResult) -> float:
    if ma.variance <= 0:
        raise EstimationError("relative efficiency undefined: MA variance is zero")
    if be.variance <= 0:
        raise EstimationError("relative efficiency undefined: BE variance is zero")
    return be.variance / ma.variance


def relative_efficiency_from_se(total_be, se_pct_be, total_ma, se_pct_ma) -> float:
    """RE from published totals and percent standard errors."""
    return (total_be * se_pct_be) ** 2 / (total_ma * se_pct_ma) ** 2


def _priority(r: EstimateResult):
    return MODEL_PRIORITY.get(r.tag.model if r.tag.estimator == "MA" else None, 3)


def best_combination(
    per_year_candidates: Mapping[int, Sequence[EstimateResult]],
    n_t: Optional[Mapping[int, int]] = None,
) -> EstimateResult:
    """Pick the smallest-variance candidate per year, then average over years."""
    chosen = {}
    for year, cands in per_year_candidates.items():
        if not cands:
            raise EstimationError(f"no candidate estimates for year {year}")
        chosen[year] = min(cands, key=lambda r: (r.variance, _priority(r)))
    avg = average_annual(chosen, n_t)
    return replace(avg, tag=replace(avg.tag, estimator="MA", model="BEST"))
