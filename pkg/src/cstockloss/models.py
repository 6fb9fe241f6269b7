"""Working models: the two-class FCL model and the ALS-FCL stock model.

Both predict annual C-stock loss per sub-plot. The FCL model uses the mean
observed loss inside and outside mapped cover loss; the ALS-FCL model
replaces the loss-class mean by an ALS-height-based stock prediction,
annualized over the remeasurement interval, wherever ALS data predate the
loss window.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from cstockloss.errors import DegenerateModelError, InputError


@dataclass(frozen=True)
class PanelWindow:
    """Reference period of the remote sensing data for one estimate.

    ``annual``: loss window ``[t - k + 1, t]``, ALS must be acquired by ``t - k``.
    ``pooled``: loss window ``[t1 - k + 1, t]``, ALS by ``t1 - k``,
    where ``t`` is the last panel year and ``k`` the remeasurement interval.
    """

    t: int
    mode: str = "annual"
    t1: Optional[int] = None
    interval_years: int = 5

    def __post_init__(self):
        if self.mode not in ("annual", "pooled"):
            raise ValueError(f"unknown window mode {self.mode!r}")
        if self.interval_years < 1:
            raise ValueError("interval_years must be >= 1")
        if self.mode == "pooled":
            if self.t1 is None or self.t1 > self.t:
                raise ValueError("pooled window needs t1 <= t")

    @classmethod
    def pooled(cls, t1: int, t: int, interval_years: int = 5) -> "PanelWindow":
        return cls(t=t, mode="pooled", t1=t1, interval_years=interval_years)

    @property
    def start(self) -> int:
        return self.t - self.interval_years + 1 if self.mode == "annual" else self.t1 - self.interval_years + 1

    @property
    def als_cutoff(self) -> int:
        return (self.t if self.mode == "annual" else self.t1) - self.interval_years

    @property
    def key(self) -> str:
        return str(self.t) if self.mode == "annual" else f"{self.t1}-{self.t}"


def recode_fcl(loss_year: Optional[int], w: PanelWindow) -> int:
    if loss_year is None:
        return 0
    return int(w.start <= loss_year <= w.t)


def als_eligible(als_year: Optional[int], w: PanelWindow) -> bool:
    return als_year is not None and als_year <= w.als_cutoff


def recode_fcl_array(loss_year: np.ndarray, w: PanelWindow) -> np.ndarray:
    """Vector form of :func:`recode_fcl`; NaN means no mapped loss."""
    ly = np.asarray(loss_year, dtype=float)
    with np.errstate(invalid="ignore"):
        return (ly >= w.start) & (ly <= w.t)


def als_eligible_array(als_year: np.ndarray, w: PanelWindow) -> np.ndarray:
    ay = np.asarray(als_year, dtype=float)
    with np.errstate(invalid="ignore"):
        return ay <= w.als_cutoff


@dataclass(frozen=True)
class FclModelParams:
    ybar_cl: float
    ybar_n: float
    n_cl: int = 1
    n_n: int = 1

    def __post_init__(self):
        if self.ybar_cl < 0 or self.ybar_n < 0:
            raise InputError("FCL class means must be >= 0")
        if self.n_cl < 1 or self.n_n < 1:
            raise InputError("FCL class counts must be >= 1")

    def predict(self, flags) -> np.ndarray:
        return np.where(np.asarray(flags, dtype=bool), self.ybar_cl, self.ybar_n)


@dataclass(frozen=True)
class CstockModelParams:
    """Quadratic C-stock model ``cs = b0 + b1*h + b2*h^2`` (t/ha vs m)."""

    beta0: float
    beta1: float
    beta2: float
    fit_n: int = 3
    height_metric: str = "first_returns"

    def __post_init__(self):
        if self.fit_n < 3:
            raise InputError("a quadratic stock model needs fit_n >= 3")

    def stock(self, height):
        h = np.asarray(height, dtype=float)
        return self.beta0 + self.beta1 * h + self.beta2 * h * h


@dataclass(frozen=True)
class AlsFclModel:
    cstock: CstockModelParams
    fcl: FclModelParams
    interval_years: int = 5
    clamp_negative: bool = True

    def __post_init__(self):
        if self.interval_years < 1:
            raise InputError("interval_years must be >= 1")

    def annual_loss(self, height):
        """Annualized stock prediction, clamped at zero if configured."""
        v = self.cstock.stock(height) / self.interval_years
        return np.maximum(v, 0.0) if self.clamp_negative else v

    def predict(self, flags, eligible, heights) -> np.ndarray:
        flags = np.asarray(flags, dtype=bool)
        als = flags & np.asarray(eligible, dtype=bool)
        out = self.fcl.predict(flags)
        if als.any():
            out = out.copy()
            out[als] = self.annual_loss(np.asarray(heights, dtype=float)[als])
        return out


WorkingModel = Union[FclModelParams, AlsFclModel]


def fit_fcl_model(c_loss, flags) -> FclModelParams:
    y = np.asarray(c_loss, dtype=float)
    f = np.asarray(flags, dtype=bool)
    n_cl = int(f.sum())
    n_n = int(len(f) - n_cl)
    if n_cl == 0:
        raise DegenerateModelError("degenerate working model: no sub-plots with FCL=1")
    if n_n == 0:
        raise DegenerateModelError("degenerate working model: no sub-plots with FCL=0")
    return FclModelParams(
        ybar_cl=float(y[f].mean()), ybar_n=float(y[~f].mean()), n_cl=n_cl, n_n=n_n
    )


@dataclass(frozen=True)
class OutlierRule:
    """Which (height, stock) pairs to drop before fitting the stock model.

    ``exclude_changed`` drops pairs flagged as changed between ALS acquisition
    and field measurement. ``residual_cutoff`` (t/ha), if set, drops pairs
    whose absolute residual from a first fit exceeds it and refits once.
    """

    exclude_changed: bool = True
    residual_cutoff: Optional[float] = None


def changed_since_als(fcl_year, als_year, panel_year) -> np.ndarray:
    """True where mapped loss falls between ALS acquisition and field visit."""
    fy = np.asarray(fcl_year, dtype=float)
    ay = np.asarray(als_year, dtype=float)
    with np.errstate(invalid="ignore"):
        return (fy >= ay) & (fy <= np.asarray(panel_year, dtype=float))


def _lstsq_quadratic(x, cs):
    if len(np.unique(x)) < 3:
        raise DegenerateModelError(
            f"rank-deficient stock model: {len(np.unique(x))} distinct heights (need >= 3)"
        )
    design = np.column_stack([np.ones_like(x), x, x * x])
    beta, *_ = np.linalg.lstsq(design, cs, rcond=None)
    return beta


def fit_cstock_model(
    height, stock, rule: OutlierRule = OutlierRule(), changed=None, height_metric="first_returns"
) -> CstockModelParams:
    """Least-squares fit of the quadratic stock model."""
    x = np.asarray(height, dtype=float)
    cs = np.asarray(stock, dtype=float)
    keep = np.isfinite(x) & np.isfinite(cs)
    if rule.exclude_changed and changed is not None:
        keep &= ~np.asarray(changed, dtype=bool)
    x, cs = x[keep], cs[keep]
    beta = _lstsq_quadratic(x, cs)
    if rule.residual_cutoff is not None:
        resid = cs - (beta[0] + beta[1] * x + beta[2] * x * x)
        inlier = np.abs(resid) <= rule.residual_cutoff
        x, cs = x[inlier], cs[inlier]
        beta = _lstsq_quadratic(x, cs)
    return CstockModelParams(*map(float, beta), fit_n=len(x), height_metric=height_metric)


def predict_subplot(s, model: WorkingModel, w: PanelWindow) -> float:
    flag = recode_fcl(s.fcl_loss_year, w)
    if isinstance(model, FclModelParams):
        return model.ybar_cl if flag else model.ybar_n
    if not flag:
        return model.fcl.ybar_n
    if als_eligible(s.als_year, w):
        return float(model.annual_loss(s.als_height))
    return model.fcl.ybar_cl


def predict_arrays(flags, eligible, heights, model: WorkingModel) -> np.ndarray:
    if isinstance(model, FclModelParams):
        return model.predict(flags)
    return model.predict(flags, eligible, heights)


# --- parameter files -----------------------------------------------------------


def params_to_dict(p) -> dict:
    if isinstance(p, FclModelParams):
        return {"kind": "fcl", **asdict(p)}
    if isinstance(p, CstockModelParams):
        return {"kind": "cstock", **asdict(p)}
    if isinstance(p, AlsFclModel):
        return {
            "kind": "als-fcl",
            "cstock": params_to_dict(p.cstock),
            "fcl": params_to_dict(p.fcl),
            "interval_years": p.interval_years,
            "clamp_negative": p.clamp_negative,
        }
    raise TypeError(type(p))


def params_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind", None)
    try:
        if kind == "fcl":
            return FclModelParams(**d)
        if kind == "cstock":
            return CstockModelParams(**d)
        if kind == "als-fcl":
            return AlsFclModel(
                cstock=params_from_dict(d["cstock"]),
                fcl=params_from_dict(d["fcl"]),
                interval_years=d.get("interval_years", 5),
                clamp_negative=d.get("clamp_negative", True),
            )
    except TypeError as exc:
        raise InputError(f"bad {kind} parameter record: {exc}") from None
    raise InputError(f"unknown parameter kind {kind!r}")


def save_params(path, params: dict) -> None:
    """Write ``{name: params}`` as JSON (floats round-trip exactly)."""
    payload = {k: params_to_dict(v) for k, v in params.items()}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_params(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise InputError(f"{path}: expected a JSON object of named parameter records")
    out = {k: params_from_dict(v) for k, v in raw.items()}
    for k, v in out.items():
        if isinstance(v, CstockModelParams) and not all(
            math.isfinite(b) for b in (v.beta0, v.beta1, v.beta2)
        ):
            raise InputError(f"{path}: {k}: non-finite coefficient")
    return out
