"""Synthetic inventory populations and repeated-sampling validation.

A population is a finite set of cluster plots. Because every cluster is
visited in exactly one panel of a sample, each sub-plot carries one potential
observation per panel year (row ``t`` of the ``(T, S)`` arrays): the loss that
would be recorded if its cluster were measured in that year, and the loss
year the FCL map shows for it. True totals per year follow by enumeration.

Random streams come from ``numpy.random.SeedSequence(seed)``: the population
uses child key ``(0,)`` and replication ``r`` uses ``(1, r)``, so a report is
identical however replications are scheduled.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from cstockloss.assisted import (
    PopulationAggregates,
    ResidualSample,
    ma_total,
    synthetic_total_als_fcl,
    synthetic_total_fcl,
)
from cstockloss.design import MODEL_PRIORITY, ratio_mean, ratio_mean_variance
from cstockloss.errors import EstimationError, InputError
from cstockloss.grid import GridRaster
from cstockloss.models import (
    AlsFclModel,
    CstockModelParams,
    OutlierRule,
    PanelWindow,
    als_eligible_array,
    changed_since_als,
    fit_cstock_model,
    fit_fcl_model,
    predict_arrays,
    recode_fcl_array,
)
from cstockloss.survey import (
    ClusterPlot,
    Stratum,
    SubPlotRecord,
    SubplotArrays,
    SurveyDataset,
    cluster_means,
)

MODELS = ("BE", "MA-FCL", "MA-ALS-FCL", "MA-BEST")
SCOPES = ("annual", "pooled", "average")


@dataclass(frozen=True)
class StratumConfig:
    stratum_id: str = "S1"
    area: float = 15.0e6
    n_clusters: int = 3000
    subplots_per_cluster: int = 8


@dataclass(frozen=True)
class PopulationConfig:
    """Generator settings.

    ``loss_prevalence`` is the probability that a sub-plot is disturbed within
    one remeasurement interval; ``loss_magnitude`` is ``(mean, sigma)`` of the
    lognormal annual loss of a disturbed sub-plot (its full stock divided by
    the interval); ``baseline_loss`` is ``(probability, mean)`` of an
    exponential background loss on undisturbed sub-plots.
    """

    strata: tuple = (StratumConfig(),)
    panel_count: int = 5
    first_year: int = 2014
    interval_years: int = 5
    loss_prevalence: float = 0.017
    loss_magnitude: tuple = (17.0, 0.5)
    baseline_loss: tuple = (0.1, 3.2)
    fcl_omission: float = 0.1
    fcl_commission: float = 0.002
    als_coverage: float = 0.25
    als_years: tuple = (2009, 2013)
    als_noise: float = 1.0
    cstock: tuple = (1.18, 8.57, 0.087)
    forest_fraction: float = 1.0
    trend: Optional[tuple] = None
    seed: int = 20201

    def __post_init__(self):
        object.__setattr__(
            self,
            "strata",
            tuple(s if isinstance(s, StratumConfig) else StratumConfig(**s) for s in self.strata),
        )
        for name in ("loss_prevalence", "fcl_omission", "fcl_commission", "als_coverage", "forest_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{name} must be a probability, got {v}")
        if not 0.0 <= self.baseline_loss[0] <= 1.0:
            raise InputError("baseline_loss probability must be in [0, 1]")
        if not self.strata:
            raise InputError("at least one stratum is required")
        for s in self.strata:
            if s.n_clusters < 1 or s.subplots_per_cluster < 1:
                raise InputError(f"stratum {s.stratum_id}: need >= 1 cluster and sub-plot")
            if not s.area > 0:
                raise InputError(f"stratum {s.stratum_id}: area must be > 0")
        if self.panel_count < 1 or self.interval_years < 1:
            raise InputError("panel_count and interval_years must be >= 1")
        if self.loss_magnitude[0] < 0 or self.loss_magnitude[1] < 0 or self.baseline_loss[1] < 0:
            raise InputError("loss parameters must be non-negative")
        if self.trend is not None:
            object.__setattr__(self, "trend", tuple(float(x) for x in self.trend))
            if len(self.trend) != self.panel_count or min(self.trend) < 0:
                raise InputError("trend needs one non-negative multiplier per panel")

    @property
    def years(self) -> list:
        return [self.first_year + t for t in range(self.panel_count)]

    @property
    def n_clusters(self) -> int:
        return sum(s.n_clusters for s in self.strata)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strata"] = [asdict(s) for s in self.strata]
        return d

    @classmethod
    def from_dict(cls, d) -> "PopulationConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        for k in ("loss_magnitude", "baseline_loss", "als_years", "cstock"):
            if k in d:
                d[k] = tuple(d[k])
        if "strata" in d:
            d["strata"] = tuple(StratumConfig(**s) for s in d["strata"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InputError(str(exc)) from None


def stock_model(cfg: PopulationConfig) -> CstockModelParams:
    return CstockModelParams(*cfg.cstock, fit_n=3)


def height_for_stock(stock, beta) -> np.ndarray:
    """Invert the quadratic stock model on its increasing branch (clipped at 0)."""
    b0, b1, b2 = beta
    cs = np.asarray(stock, dtype=float)
    if b2 == 0:
        x = (cs - b0) / b1
    else:
        disc = b1 * b1 - 4 * b2 * (b0 - cs)
        vertex = -b1 / (2 * b2)
        with np.errstate(invalid="ignore"):
            x = np.where(disc >= 0, (-b1 + np.sqrt(np.maximum(disc, 0))) / (2 * b2), vertex)
    return np.maximum(x, 0.0)


@dataclass(frozen=True, eq=False)
class Population:
    config: PopulationConfig
    years: np.ndarray  # (T,)
    stratum_ids: tuple
    areas: np.ndarray  # (H,)
    cluster_stratum: np.ndarray  # (N,)
    m: np.ndarray  # (N,)
    first_subplot: np.ndarray  # (N,)
    sub_cluster: np.ndarray  # (S,)
    stock: np.ndarray  # (S,) pre-disturbance stock, t/ha
    height: np.ndarray  # (S,) NaN outside ALS coverage
    als_year: np.ndarray  # (S,)
    forest: np.ndarray  # (S,) bool
    y: np.ndarray  # (T, S) annual loss if measured in year t
    disturbed: np.ndarray  # (T, S)
    fcl_year: np.ndarray  # (T, S) NaN = no mapped loss

    @property
    def n_clusters(self) -> int:
        return len(self.m)

    @property
    def sub_stratum(self) -> np.ndarray:
        return self.cluster_stratum[self.sub_cluster]

    def area_per_subplot(self) -> np.ndarray:
        counts = np.bincount(self.sub_stratum, minlength=len(self.areas))
        return self.areas / counts

    def true_totals(self, domain: str = "all") -> np.ndarray:
        """Exact totals, shape ``(H, T)``."""
        y = self.y if domain == "all" else self.y * self.forest
        a = self.area_per_subplot()
        out = np.empty((len(self.areas), len(self.years)))
        for h in range(len(self.areas)):
            out[h] = a[h] * y[:, self.sub_stratum == h].sum(axis=1)
        return out


def _rng(seed: int, *key) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def generate_population(cfg: PopulationConfig) -> Population:
    rng = _rng(cfg.seed, 0)
    k = cfg.interval_years
    years = np.asarray(cfg.years)
    T = len(years)

    m = np.concatenate([np.full(s.n_clusters, s.subplots_per_cluster) for s in cfg.strata]).astype(float)
    cluster_stratum = np.concatenate(
        [np.full(s.n_clusters, h) for h, s in enumerate(cfg.strata)]
    ).astype(np.intp)
    first_subplot = np.concatenate([[0], np.cumsum(m[:-1])]).astype(np.intp)
    sub_cluster = np.repeat(np.arange(len(m)), m.astype(int))
    S = len(sub_cluster)

    mu, sigma = cfg.loss_magnitude
    if mu > 0:
        stock = k * rng.lognormal(math.log(mu) - sigma**2 / 2, sigma, S)
    else:
        stock = np.zeros(S)
    covered = rng.random(S) < cfg.als_coverage
    als_year = np.where(covered, rng.integers(cfg.als_years[0], cfg.als_years[1] + 1, S), np.nan)
    height = height_for_stock(stock, cfg.cstock) + cfg.als_noise * rng.standard_normal(S)
    height = np.where(covered, np.maximum(height, 0.0), np.nan)
    forest = rng.random(S) < cfg.forest_fraction

    bp, bmean = cfg.baseline_loss
    trend = cfg.trend or (1.0,) * T
    y = np.empty((T, S))
    disturbed = np.empty((T, S), dtype=bool)
    fcl_year = np.full((T, S), np.nan)
    for t, year in enumerate(years):
        p = min(1.0, cfg.loss_prevalence * trend[t])
        d = rng.random(S) < p
        event = rng.integers(year - k + 1, year + 1, S)
        baseline = np.where(rng.random(S) < bp, rng.exponential(bmean, S) if bmean > 0 else 0.0, 0.0)
        y[t] = np.where(d, stock / k, baseline)
        disturbed[t] = d
        # Losses before this panel's own window still show up in a pooled FCL window.
        old_span = year - k + 1 - (years[0] - k + 1)
        p_old = 1.0 - (1.0 - p) ** (old_span / k) if old_span > 0 else 0.0
        old = (rng.random(S) < p_old) & ~d
        old_year = rng.integers(years[0] - k + 1, max(years[0] - k + 1, year - k) + 1, S)
        detect = rng.random(S) >= cfg.fcl_omission
        commission = rng.random(S) < cfg.fcl_commission
        commission_year = rng.integers(year - k + 1, year + 1, S)
        fy = np.full(S, np.nan)
        fy = np.where(commission & ~d & ~old, commission_year, fy)
        fy = np.where(old & detect, old_year, fy)
        fy = np.where(d & detect, event, fy)
        fcl_year[t] = fy

    return Population(
        config=cfg,
        years=years,
        stratum_ids=tuple(s.stratum_id for s in cfg.strata),
        areas=np.array([s.area for s in cfg.strata], dtype=float),
        cluster_stratum=cluster_stratum,
        m=m,
        first_subplot=first_subplot,
        sub_cluster=sub_cluster,
        stock=stock,
        height=height,
        als_year=als_year,
        forest=forest,
        y=y,
        disturbed=disturbed,
        fcl_year=fcl_year,
    )


# --- sampling --------------------------------------------------------------------


@dataclass(frozen=True)
class SampleDraw:
    clusters: np.ndarray  # population cluster indices
    panel: np.ndarray  # panel index (row of the population arrays)


def draw_indices(pop: Population, design: str, n, rng: np.random.Generator) -> SampleDraw:
    """Select clusters per stratum and assign panels round-robin in draw order.

    ``n`` is the total sample size (allocated proportionally to stratum
    cluster counts) or a per-stratum sequence. For ``systematic`` the step is
    ``N_h // n_h`` with a random start in ``[0, step)`` and the round-robin
    panel labels start at a random offset.
    """
    T = len(pop.years)
    sizes = _allocate(pop, n)
    clusters, panels = [], []
    for h, n_h in enumerate(sizes):
        ids = np.flatnonzero(pop.cluster_stratum == h)
        N_h = len(ids)
        if n_h > N_h:
            raise InputError(f"sample size {n_h} exceeds population size {N_h}")
        if n_h < 1:
            raise InputError("each stratum needs a sample size >= 1")
        if design == "srs":
            pick = rng.choice(N_h, n_h, replace=False)
            offset = 0
        elif design == "systematic":
            step = N_h // n_h
            pick = rng.integers(step) + step * np.arange(n_h)
            # Random rotation of the panel labels: otherwise a cluster's panel
            # would be fixed by its position and panels would not be exchangeable.
            offset = int(rng.integers(T))
        else:
            raise InputError(f"unknown design {design!r}")
        clusters.append(ids[pick])
        panels.append((np.arange(n_h) + offset) % T)
    return SampleDraw(np.concatenate(clusters), np.concatenate(panels))


def _allocate(pop: Population, n) -> list:
    H = len(pop.areas)
    if np.ndim(n) == 0:
        if H == 1:
            return [int(n)]
        counts = np.bincount(pop.cluster_stratum, minlength=H)
        return [int(round(n * c / counts.sum())) for c in counts]
    if len(n) != H:
        raise InputError("per-stratum sample sizes do not match strata")
    return [int(v) for v in n]


def sample_arrays(pop: Population, draw: SampleDraw, domain: str = "all") -> SubplotArrays:
    m = pop.m[draw.clusters]
    reps = m.astype(int)
    starts = pop.first_subplot[draw.clusters]
    offsets = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
    sub = np.repeat(starts, reps) + offsets
    row = np.repeat(draw.panel, reps)
    c_stock = np.where(pop.disturbed[row, sub], 0.0, pop.stock[sub])
    return SubplotArrays(
        cluster=np.repeat(np.arange(len(m)), reps),
        y=pop.y[row, sub],
        indicator=np.ones(len(sub), dtype=bool) if domain == "all" else pop.forest[sub],
        fcl_year=pop.fcl_year[row, sub],
        als_height=pop.height[sub],
        als_year=pop.als_year[sub],
        c_stock=c_stock,
        m=m,
        panel_year=pop.years[draw.panel],
        stratum=np.asarray(pop.stratum_ids, dtype=object)[pop.cluster_stratum[draw.clusters]],
    )


def draw_sample(
    pop: Population, design: str = "srs", n=None, seed: int = 0, rng=None
) -> SurveyDataset:
    """Draw a sample and return it as a :class:`SurveyDataset`."""
    rng = rng if rng is not None else _rng(seed, 2)
    draw = draw_indices(pop, design, pop.n_clusters if n is None else n, rng)
    arr = sample_arrays(pop, draw)

    def opt(v, kind=float):
        return None if np.isnan(v) else kind(v)

    plots = []
    for i, c in enumerate(draw.clusters):
        subs = np.flatnonzero(arr.cluster == i)
        sid = pop.stratum_ids[pop.cluster_stratum[c]]
        cid = f"{sid}-{int(c)}"
        records = [
            SubPlotRecord(
                cluster_id=cid,
                subplot_index=j,
                c_loss=float(arr.y[s]),
                domain_flags={"forest": bool(pop.forest[pop.first_subplot[c] + j])},
                fcl_loss_year=opt(arr.fcl_year[s], int),
                als_height=opt(arr.als_height[s]),
                als_year=opt(arr.als_year[s], int),
                c_stock=float(arr.c_stock[s]),
            )
            for j, s in enumerate(subs)
        ]
        plots.append(ClusterPlot(cid, int(arr.panel_year[i]), sid, records))
    strata = [Stratum(s, float(a)) for s, a in zip(pop.stratum_ids, pop.areas)]
    return SurveyDataset(strata, plots, interval_years=pop.config.interval_years)


def population_grids(pop: Population, row: int, stratum: int = 0):
    """FCL, ALS height and ALS year grids of one stratum for panel row ``row``.

    One cell per sub-plot (rows = clusters); cell area is the sub-plot's share
    of the stratum area. FCL cells without mapped loss hold 0.
    """
    in_h = pop.sub_stratum == stratum
    m = np.unique(pop.m[pop.cluster_stratum == stratum])
    if len(m) != 1:
        raise InputError("population grids need a constant number of sub-plots per cluster")
    shape = (-1, int(m[0]))
    area = float(pop.area_per_subplot()[stratum])
    fcl = np.nan_to_num(pop.fcl_year[row, in_h], nan=0.0).reshape(shape)
    return (
        GridRaster.from_array(fcl, area),
        GridRaster.from_array(pop.height[in_h].reshape(shape), area),
        GridRaster.from_array(pop.als_year[in_h].reshape(shape), area),
    )


# --- population side of the synthetic estimates ---------------------------------------


@dataclass(frozen=True, eq=False)
class _WindowMaps:
    """Per-stratum aggregates and ALS heights for one window."""

    window: PanelWindow
    rows: tuple  # panel rows this window draws on
    aggregates: tuple  # per stratum PopulationAggregates
    heights: tuple  # per stratum heights of the lam_l cells (all rows pooled)


def _window_maps(pop: Population, w: PanelWindow, rows) -> _WindowMaps:
    a = pop.area_per_subplot()
    weight = 1.0 / len(rows)
    aggs, heights = [], []
    for h in range(len(pop.areas)):
        in_h = pop.sub_stratum == h
        n_cl = n_l = n_n = 0
        hs = []
        eligible = als_eligible_array(pop.als_year[in_h], w) & np.isfinite(pop.height[in_h])
        for r in rows:
            flags = recode_fcl_array(pop.fcl_year[r, in_h], w)
            cov = flags & eligible
            n_l += int(cov.sum())
            n_cl += int((flags & ~cov).sum())
            n_n += int((~flags).sum())
            hs.append(pop.height[in_h][cov])
        hs = np.concatenate(hs)
        aggs.append(
            PopulationAggregates(
                lam=float(pop.areas[h]),
                lam_cl=a[h] * weight * n_cl,
                lam_n=a[h] * weight * n_n,
                lam_l=a[h] * weight * n_l,
                xbar_l=float(hs.mean()) if n_l else None,
                stratum_id=pop.stratum_ids[h],
                window=w,
            )
        )
        heights.append(hs)
    return _WindowMaps(w, tuple(rows), tuple(aggs), tuple(heights))


def _windows(pop: Population, scopes) -> list:
    k = pop.config.interval_years
    years = [int(y) for y in pop.years]
    out = []
    if "annual" in scopes or "average" in scopes:
        out += [_window_maps(pop, PanelWindow(y, "annual", interval_years=k), [t]) for t, y in enumerate(years)]
    if "pooled" in scopes:
        out.append(_window_maps(pop, PanelWindow.pooled(years[0], years[-1], k), list(range(len(years)))))
    return out


# --- one replication ---------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationPlan:
    design: str = "srs"
    n: object = 150
    models: tuple = MODELS
    scopes: tuple = SCOPES
    domain: str = "all"
    refit_cstock: bool = True
    clamp_negative: bool = True
    # Fixed working models (used instead of fitting when given); keyed by window key.
    fixed_fcl: Optional[dict] = None

    def __post_init__(self):
        for mdl in self.models:
            if mdl not in MODELS:
                raise InputError(f"unknown estimator {mdl!r}; choose from {', '.join(MODELS)}")
        for s in self.scopes:
            if s not in SCOPES:
                raise InputError(f"unknown scope {s!r}")


def _fit_models(arr: SubplotArrays, maps, plan: SimulationPlan, pop: Population):
    """Return {window key: (fcl model or exception, als model or exception)}."""
    cfg = pop.config
    cstock = stock_model(cfg)
    cstock_error = None
    need_als = "MA-ALS-FCL" in plan.models or "MA-BEST" in plan.models
    if need_als and plan.refit_cstock:
        has = np.isfinite(arr.als_height)
        changed = changed_since_als(arr.fcl_year, arr.als_year, arr.subplot_panel_year)
        try:
            cstock = fit_cstock_model(
                arr.als_height[has], arr.c_stock[has], OutlierRule(), changed=changed[has]
            )
        except EstimationError as exc:
            cstock_error = exc
    out = {}
    sub_year = arr.subplot_panel_year
    for wm in maps:
        w = wm.window
        if plan.fixed_fcl is not None:
            fcl = plan.fixed_fcl[w.key]
        else:
            sel = (sub_year >= (w.t if w.mode == "annual" else w.t1)) & (sub_year <= w.t)
            try:
                fcl = fit_fcl_model(arr.y[sel], recode_fcl_array(arr.fcl_year[sel], w))
            except EstimationError as exc:
                fcl = exc
        if isinstance(fcl, Exception):
            als = fcl
        elif cstock_error is not None:
            als = cstock_error
        else:
            als = AlsFclModel(cstock, fcl, cfg.interval_years, plan.clamp_negative)
        out[w.key] = (fcl, als)
    return out


def _estimates_for_window(arr, wm: _WindowMaps, models, plan, pop):
    """Combined-over-strata (total, variance) per estimator for one window."""
    w = wm.window
    lo = w.t if w.mode == "annual" else w.t1
    in_window = (arr.panel_year >= lo) & (arr.panel_year <= w.t)
    y_i = cluster_means(arr.cluster, np.where(arr.indicator, arr.y, 0.0), arr.m)
    flags = recode_fcl_array(arr.fcl_year, w)
    eligible = als_eligible_array(arr.als_year, w)

    fcl, als = models
    candidates = {"BE": None}
    if "MA-FCL" in plan.models or "MA-BEST" in plan.models:
        candidates["MA-FCL"] = fcl
    if "MA-ALS-FCL" in plan.models or "MA-BEST" in plan.models:
        candidates["MA-ALS-FCL"] = als

    resid = {}
    for name, model in candidates.items():
        if model is None or isinstance(model, Exception):
            continue
        yhat = predict_arrays(flags, eligible, arr.als_height, model)
        resid[name] = cluster_means(arr.cluster, np.where(arr.indicator, arr.y - yhat, 0.0), arr.m)

    out = {}
    for name, model in candidates.items():
        if isinstance(model, Exception):
            out[name] = (math.nan, math.nan)
            continue
        total = var = 0.0
        try:
            for h, stratum_id in enumerate(pop.stratum_ids):
                sel = in_window & (arr.stratum == stratum_id)
                m = arr.m[sel]
                area = float(pop.areas[h])
                if name == "BE":
                    total += area * ratio_mean(m, y_i[sel])
                    var += area**2 * ratio_mean_variance(m, y_i[sel])
                    continue
                agg = wm.aggregates[h]
                if name == "MA-FCL":
                    synth = synthetic_total_fcl(agg, model)
                else:
                    synth = synthetic_total_als_fcl(agg, model, pixel_heights=wm.heights[h] if agg.lam_l else None)
                est = ma_total(synth, ResidualSample(m, resid[name][sel]), area)
                total += est.total
                var += est.variance
        except EstimationError:
            total = var = math.nan
        out[name] = (total, var)
    return out


def replicate(pop: Population, plan: SimulationPlan, maps, rng) -> dict:
    """One draw-fit-estimate cycle. Returns ``{key: (total, variance)}``."""
    draw = draw_indices(pop, plan.design, plan.n, rng)
    return _evaluate(pop, plan, maps, draw)


def _evaluate(pop, plan, maps, draw) -> dict:
    arr = sample_arrays(pop, draw, plan.domain)
    fitted = _fit_models(arr, maps, plan, pop)
    years = [int(y) for y in pop.years]
    n_t = np.bincount(draw.panel, minlength=len(years))
    per_window = {
        wm.window.key: _estimates_for_window(arr, wm, fitted[wm.window.key], plan, pop)
        for wm in maps
    }
    return _assemble(per_window, years, n_t, plan)


def truth_for(pop: Population, plan: SimulationPlan) -> dict:
    """Exact target of every estimator key for the plan's sample sizes."""
    T_ht = pop.true_totals(plan.domain)
    sizes = _allocate(pop, plan.n)
    T = len(pop.years)
    n_ht = np.array([[len(range(t, n_h, T)) for t in range(T)] for n_h in sizes], dtype=float)
    pooled = float(sum(np.dot(n_ht[h] / n_ht[h].sum(), T_ht[h]) for h in range(len(sizes))))
    n_t = n_ht.sum(axis=0)
    average = float(np.dot(n_t / n_t.sum(), T_ht.sum(axis=0)))
    out = {}
    for mdl in plan.models:
        for t, y in enumerate(pop.years):
            out[f"{mdl}/annual/{int(y)}"] = float(T_ht[:, t].sum())
        out[f"{mdl}/pooled"] = pooled
        out[f"{mdl}/average"] = average
    return out


# --- reporting --------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorSummary:
    key: str
    truth: float
    n_ok: int
    failures: int
    mean: float
    rel_bias: float
    rel_mcse: float
    var_emp: float
    mean_var: float
    var_ratio: float
    var_ratio_se: float
    mean_re: float

    @property
    def failure_rate(self) -> float:
        return self.failures / max(1, self.n_ok + self.failures)


def _summarize(key, truth, totals, variances, be_vars) -> EstimatorSummary:
    ok = np.isfinite(totals) & np.isfinite(variances)
    t, v = totals[ok], variances[ok]
    n = int(ok.sum())
    mean = float(t.mean()) if n else math.nan
    sd = float(t.std(ddof=1)) if n > 1 else math.nan
    var_emp = sd**2
    mean_var = float(v.mean()) if n else math.nan
    ratio = mean_var / var_emp if var_emp > 0 else math.nan
    re = math.nan
    if be_vars is not None:
        both = ok & np.isfinite(be_vars) & (variances > 0)
        if both.any():
            re = float(np.mean(be_vars[both] / variances[both]))
    scale = abs(truth) if truth != 0 else 1.0
    return EstimatorSummary(
        key=key,
        truth=truth,
        n_ok=n,
        failures=int((~ok).sum()),
        mean=mean,
        rel_bias=(mean - truth) / scale,
        rel_mcse=sd / math.sqrt(n) / scale if n > 1 else math.nan,
        var_emp=var_emp,
        mean_var=mean_var,
        var_ratio=ratio,
        var_ratio_se=ratio * math.sqrt(2.0 / (n - 1)) if n > 1 else math.nan,
        mean_re=re,
    )


_REPORT_FIELDS = [f.name for f in fields(EstimatorSummary)]


@dataclass(frozen=True)
class ValidationReport:
    replications: int
    seed: int
    design: str
    n: object
    summaries: dict
    exhaustive: bool = False
    failure_threshold: float = 0.05

    def __getitem__(self, key) -> EstimatorSummary:
        return self.summaries[key]

    def rows(self) -> list:
        return [asdict(self.summaries[k]) for k in sorted(self.summaries)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=_REPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "replications": self.replications,
            "seed": self.seed,
            "design": self.design,
            "n": self.n,
            "exhaustive": self.exhaustive,
            "estimators": [
                {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()}
                for r in self.rows()
            ],
        }
        return json.dumps(payload, indent=2) + "\n"

    def high_failure(self) -> list:
        return [k for k, s in self.summaries.items() if s.failure_rate > self.failure_threshold]

    def check(self, keys=None, bias_mcse: float = 3.0, ratio_band=(0.9, 1.1)) -> list:
        """Return human-readable violations of the design properties.

        Bias must lie within ``bias_mcse`` Monte Carlo standard errors. The
        variance-ratio band applies as given at R >= 10 000; with fewer
        replications it is widened by three Monte Carlo standard errors of the
        ratio. Systematic designs are only held to the lower bound.

        By default annual and BEST keys are skipped, as are keys whose failure
        rate exceeds the threshold (their statistics are conditional on the
        estimate existing); see :meth:`high_failure`.
        """
        problems = []
        if keys is None:
            skip = set(self.high_failure())
            keys = [
                k for k in self.summaries
                if "/annual/" not in k and not k.startswith("MA-BEST") and k not in skip
            ]
        for k in sorted(keys):
            s = self.summaries[k]
            if s.n_ok < 2:
                problems.append(f"{k}: fewer than two successful replications")
                continue
            if self.exhaustive:
                if abs(s.rel_bias) > 1e-12:
                    problems.append(f"{k}: exact relative bias {s.rel_bias:.3g} > 1e-12")
                continue
            if abs(s.rel_bias) > bias_mcse * s.rel_mcse:
                problems.append(
                    f"{k}: relative bias {s.rel_bias:.4g} exceeds {bias_mcse} MCSE ({s.rel_mcse:.4g})"
                )
            slack = 0.0 if s.n_ok >= 10_000 else 3 * s.var_ratio_se
            lo, hi = ratio_band[0] - slack, ratio_band[1] + slack
            if not s.var_ratio >= lo or (self.design == "srs" and s.var_ratio > hi):
                problems.append(f"{k}: variance ratio {s.var_ratio:.4g} outside [{lo:.3g}, {hi:.3g}]")
        return problems


def _run_chunk(args):
    cfg, plan, seed, reps = args
    pop = generate_population(cfg)
    maps = _windows(pop, plan.scopes)
    return [replicate(pop, plan, maps, _rng(seed, 1, r)) for r in reps]


def run_replications(
    cfg: PopulationConfig,
    plan: SimulationPlan = SimulationPlan(),
    R: int = 1000,
    workers: int = 1,
    exhaustive: bool = False,
    cap: int = 1_000_000,
    failure_threshold: float = 0.05,
    population: Optional[Population] = None,
) -> ValidationReport:
    """Repeated sampling (or full enumeration) from one synthetic population.

    Working models are refitted on every sample unless ``plan.fixed_fcl``
    is set. Failed estimates (e.g. an empty FCL class) are counted per
    estimator and excluded from its statistics.
    """
    if exhaustive:
        return exhaustive_report(cfg, plan, cap=cap, population=population)
    if R < 2:
        raise InputError(f"replication count must be >= 2, got {R}")
    pop = population if population is not None else generate_population(cfg)
    if workers > 1:
        chunks = [(cfg, plan, cfg.seed, range(i, R, workers)) for i in range(workers)]
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_run_chunk, chunks))
        results = [None] * R
        for i, part in enumerate(parts):
            results[i::workers] = part
    else:
        maps = _windows(pop, plan.scopes)
        results = [replicate(pop, plan, maps, _rng(cfg.seed, 1, r)) for r in range(R)]
    return _report(pop, plan, results, cfg.seed, failure_threshold)


def _report(pop, plan, results, seed, failure_threshold, exhaustive=False) -> ValidationReport:
    truth = truth_for(pop, plan)
    keys = sorted(results[0])
    arr = {k: np.array([r[k] for r in results], dtype=float) for k in keys}
    summaries = {}
    for k in keys:
        model, _, rest = k.partition("/")
        be_key = f"BE/{rest}"
        be_vars = arr[be_key][:, 1] if model != "BE" and be_key in arr else None
        summaries[k] = _summarize(k, truth[k], arr[k][:, 0], arr[k][:, 1], be_vars)
    return ValidationReport(
        replications=len(results),
        seed=seed,
        design=plan.design,
        n=plan.n,
        summaries=summaries,
        exhaustive=exhaustive,
        failure_threshold=failure_threshold,
    )


def exhaustive_report(
    cfg: PopulationConfig,
    plan: SimulationPlan,
    cap: int = 1_000_000,
    population: Optional[Population] = None,
) -> ValidationReport:
    """Evaluate the estimators on every possible sample of the design.

    ``srs`` (single stratum): every subset of size ``plan.n`` combined with
    every distinct assignment of its members to panels. ``systematic``: every
    random start combined with every panel-label offset. Working models come
    from ``plan.fixed_fcl`` when given (design-unbiased difference estimator)
    and are refitted per sample otherwise.
    """
    pop = population if population is not None else generate_population(cfg)
    maps = _windows(pop, plan.scopes)
    T = len(pop.years)
    draws = []
    if plan.design == "systematic":
        sizes = _allocate(pop, plan.n)
        steps = [int((pop.cluster_stratum == h).sum()) // n_h for h, n_h in enumerate(sizes)]
        count = math.prod(steps) * T ** len(sizes)
        if count > cap:
            raise InputError(f"{count} systematic samples exceed the enumeration cap {cap}")
        per_stratum = []
        for h, (n_h, step) in enumerate(zip(sizes, steps)):
            ids = np.flatnonzero(pop.cluster_stratum == h)
            per_stratum.append([
                (ids[start + step * np.arange(n_h)], (np.arange(n_h) + offset) % T)
                for start in range(step)
                for offset in range(T)
            ])
        for combo in itertools.product(*per_stratum):
            draws.append(SampleDraw(np.concatenate([c for c, _ in combo]), np.concatenate([p for _, p in combo])))
    else:
        if len(pop.areas) != 1:
            raise InputError("exhaustive srs enumeration supports a single stratum")
        N, n = pop.n_clusters, int(plan.n)
        count = math.comb(N, n)
        if count > cap:
            raise InputError(f"C({N},{n}) = {count} samples exceeds the enumeration cap {cap}")
        assignments = sorted(set(itertools.permutations(tuple(np.arange(n) % T))))
        if count * len(assignments) > cap:
            raise InputError(
                f"{count} samples x {len(assignments)} panel assignments exceeds the enumeration cap {cap}"
            )
        # Every subset, and every assignment of its members to panels, is equally likely.
        for combo in itertools.combinations(range(N), n):
            for panels in assignments:
                draws.append(SampleDraw(np.asarray(combo), np.asarray(panels)))
    results = [_evaluate(pop, plan, maps, d) for d in draws]
    return _report(pop, plan, results, cfg.seed, 1.0, exhaustive=True)


def _assemble(per_window, years, n_t, plan) -> dict:
    res = {}
    names = [mdl for mdl in ("BE", "MA-FCL", "MA-ALS-FCL") if mdl in plan.models]
    n_p = n_t.sum()
    if "annual" in plan.scopes:
        for mdl in names:
            for y in years:
                res[f"{mdl}/annual/{y}"] = per_window[str(y)][mdl]
    if "average" in plan.scopes:
        for mdl in names:
            tv = np.array([per_window[str(y)][mdl] for y in years])
            res[f"{mdl}/average"] = (
                float(np.dot(n_t, tv[:, 0]) / n_p),
                float(np.dot(n_t**2, tv[:, 1]) / n_p**2),
            )
        if "MA-BEST" in plan.models:
            chosen = []
            for y in years:
                cands = [
                    (v[1], MODEL_PRIORITY[None if k == "BE" else k[3:]], v)
                    for k, v in per_window[str(y)].items()
                    if np.isfinite(v[1])
                ]
                chosen.append(min(cands)[2] if cands else (math.nan, math.nan))
            tv = np.array(chosen)
            res["MA-BEST/average"] = (
                float(np.dot(n_t, tv[:, 0]) / n_p),
                float(np.dot(n_t**2, tv[:, 1]) / n_p**2),
            )
    if "pooled" in plan.scopes:
        key = f"{years[0]}-{years[-1]}"
        for mdl in names:
            res[f"{mdl}/pooled"] = per_window[key][mdl]
    return res
