"""Plot/sub-plot data model, CSV ingestion and panel handling."""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from cstockloss.errors import InputError

PLOT_COLUMNS = (
    "cluster_id",
    "subplot_index",
    "panel_year",
    "stratum_id",
    "c_loss",
    "forest",
    "fcl_loss_year",
    "als_height",
    "als_year",
)
# Not required; used only when fitting the ALS stock model from field data.
OPTIONAL_PLOT_COLUMNS = ("c_stock",)
STRATA_COLUMNS = ("stratum_id", "lambda_ha")

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


@dataclass(frozen=True)
class SubPlotRecord:
    cluster_id: str
    subplot_index: int
    c_loss: float
    domain_flags: Mapping[str, bool] = field(default_factory=lambda: {"forest": True})
    fcl_loss_year: Optional[int] = None
    als_height: Optional[float] = None
    als_year: Optional[int] = None
    c_stock: Optional[float] = None

    def __post_init__(self):
        if not math.isfinite(self.c_loss) or self.c_loss < 0:
            raise InputError(f"negative loss c_loss={self.c_loss} (gross loss must be >= 0)")
        if (self.als_height is None) != (self.als_year is None):
            raise InputError("als_height and als_year must be both present or both absent")
        if self.als_height is not None and not math.isfinite(self.als_height):
            raise InputError("als_height must be finite")

    def in_domain(self, selector: "DomainSelector") -> bool:
        return selector.indicator(self)


@dataclass(frozen=True)
class ClusterPlot:
    cluster_id: str
    panel_year: int
    stratum_id: str
    subplots: tuple

    def __post_init__(self):
        object.__setattr__(self, "subplots", tuple(self.subplots))
        if not self.subplots:
            raise InputError(f"cluster {self.cluster_id!r} has no sub-plots")
        for s in self.subplots:
            if s.cluster_id != self.cluster_id:
                raise InputError(
                    f"sub-plot of cluster {s.cluster_id!r} attached to cluster {self.cluster_id!r}"
                )

    @property
    def m(self) -> int:
        return len(self.subplots)


@dataclass(frozen=True)
class Stratum:
    stratum_id: str
    area: float

    def __post_init__(self):
        if not self.area > 0:
            raise InputError(f"stratum {self.stratum_id!r}: area must be > 0, got {self.area}")


@dataclass(frozen=True)
class DomainSelector:
    """Which sub-plots count towards an estimate.

    ``DomainSelector()`` selects everything (all land-use categories);
    ``DomainSelector("forest")`` keeps sub-plots whose ``forest`` flag is set.
    """

    name: Optional[str] = None

    @property
    def label(self) -> str:
        return self.name or "all"

    @classmethod
    def parse(cls, text: str) -> "DomainSelector":
        return cls(None if text in ("", "all") else text)

    def indicator(self, s: SubPlotRecord) -> bool:
        if self.name is None:
            return True
        try:
            return bool(s.domain_flags[self.name])
        except KeyError:
            raise InputError(
                f"domain {self.name!r} not recorded for sub-plot {s.cluster_id}/{s.subplot_index}"
            ) from None


@dataclass(frozen=True)
class SubplotArrays:
    """Columnar view of a set of cluster plots.

    Sub-plot level arrays are aligned; ``cluster`` maps each sub-plot to its
    row in the cluster level arrays (``m``, ``panel_year``, ``stratum``).
    Missing optional values are NaN.
    """

    cluster: np.ndarray
    y: np.ndarray
    indicator: np.ndarray
    fcl_year: np.ndarray
    als_height: np.ndarray
    als_year: np.ndarray
    c_stock: np.ndarray
    m: np.ndarray
    panel_year: np.ndarray
    stratum: np.ndarray

    @property
    def n(self) -> int:
        return len(self.m)

    @property
    def subplot_panel_year(self) -> np.ndarray:
        return self.panel_year[self.cluster]


def _opt(v):
    return np.nan if v is None else float(v)


def to_arrays(plots: Sequence[ClusterPlot], domain: DomainSelector = DomainSelector()) -> SubplotArrays:
    cluster, y, ind, fy, ah, ay, cs = [], [], [], [], [], [], []
    for i, p in enumerate(plots):
        for s in p.subplots:
            cluster.append(i)
            y.append(s.c_loss)
            ind.append(domain.indicator(s))
            fy.append(_opt(s.fcl_loss_year))
            ah.append(_opt(s.als_height))
            ay.append(_opt(s.als_year))
            cs.append(_opt(s.c_stock))
    return SubplotArrays(
        cluster=np.asarray(cluster, dtype=np.intp),
        y=np.asarray(y, dtype=float),
        indicator=np.asarray(ind, dtype=bool),
        fcl_year=np.asarray(fy, dtype=float),
        als_height=np.asarray(ah, dtype=float),
        als_year=np.asarray(ay, dtype=float),
        c_stock=np.asarray(cs, dtype=float),
        m=np.asarray([p.m for p in plots], dtype=float),
        panel_year=np.asarray([p.panel_year for p in plots], dtype=int),
        stratum=np.asarray([p.stratum_id for p in plots], dtype=object),
    )


def cluster_means(cluster: np.ndarray, values: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Per-cluster sum of sub-plot ``values`` divided by the cluster's ``m``."""
    return np.bincount(cluster, weights=values, minlength=len(m)) / m


def cluster_domain_mean(plot: ClusterPlot, domain: DomainSelector = DomainSelector()) -> float:
    """Domain-restricted cluster mean.

    Out-of-domain sub-plots contribute zero but still count in the divisor, so
    the result is the per-sub-plot average over all ``m`` sub-plots.
    """
    return sum(s.c_loss for s in plot.subplots if domain.indicator(s)) / plot.m


@dataclass(frozen=True)
class SurveyDataset:
    strata: tuple
    plots: tuple
    interval_years: int = 5

    def __post_init__(self):
        object.__setattr__(self, "strata", tuple(self.strata))
        object.__setattr__(self, "plots", tuple(self.plots))
        if self.interval_years < 1:
            raise InputError("interval_years must be a positive integer")
        known = {s.stratum_id for s in self.strata}
        if len(known) != len(self.strata):
            raise InputError("duplicate stratum_id in strata")
        for p in self.plots:
            if p.stratum_id not in known:
                raise InputError(f"cluster {p.cluster_id!r}: unknown stratum_id {p.stratum_id!r}")

    @property
    def panel_years(self) -> list:
        return sorted({p.panel_year for p in self.plots})

    def stratum(self, stratum_id: str) -> Stratum:
        for s in self.strata:
            if s.stratum_id == stratum_id:
                return s
        raise KeyError(stratum_id)

    def in_stratum(self, stratum_id: str) -> "SurveyDataset":
        return SurveyDataset(
            strata=[self.stratum(stratum_id)],
            plots=[p for p in self.plots if p.stratum_id == stratum_id],
            interval_years=self.interval_years,
        )

    def check_pooled(self) -> None:
        """A pooled run needs one panel per year of a full remeasurement cycle."""
        years = self.panel_years
        expected = list(range(years[0], years[0] + self.interval_years)) if years else []
        if years != expected:
            raise InputError(
                f"pooled sample needs panels {expected or '<consecutive years>'}, found {years}"
            )


def split_panels(ds: SurveyDataset) -> "OrderedDict[int, list]":
    """Partition plots by panel year (ascending)."""
    panels: dict = {}
    for p in ds.plots:
        panels.setdefault(p.panel_year, []).append(p)
    return OrderedDict(sorted(panels.items()))


# --- ingestion ---------------------------------------------------------------


def _parse_bool(text, column, row):
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise InputError(f"column {column!r}: cannot parse {text!r} as boolean", row)


def _parse_num(text, column, row, kind=float, optional=False):
    t = text.strip()
    if t == "":
        if optional:
            return None
        raise InputError(f"column {column!r}: value required", row)
    try:
        if kind is int:
            v = float(t)
            if not v.is_integer():
                raise ValueError
            return int(v)
        v = float(t)
        if not math.isfinite(v):
            raise ValueError
        return v
    except ValueError:
        raise InputError(f"column {column!r}: cannot parse {text!r}", row) from None


def _reader(path, delimiter):
    fh = open(path, newline="", encoding="utf-8")
    sample = fh.read(4096)
    fh.seek(0)
    if delimiter is None:
        try:
            delimiter = csv.Sniffer().sniff(sample, delimiters=",;\t").delimiter
        except csv.Error:
            delimiter = ","
    return fh, csv.DictReader(fh, delimiter=delimiter)


def load_strata(path, delimiter=None) -> list:
    fh, reader = _reader(path, delimiter)
    with fh:
        missing = [c for c in STRATA_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise InputError(f"{path}: missing column(s) {', '.join(missing)}")
        out = []
        for row_no, row in enumerate(reader, start=2):
            try:
                out.append(Stratum(row["stratum_id"].strip(), _parse_num(row["lambda_ha"], "lambda_ha", row_no)))
            except InputError as exc:
                if exc.row is None:
                    raise InputError(str(exc), row_no) from None
                raise
    return out


def load_dataset(
    path,
    strata,
    schema: Optional[Mapping[str, str]] = None,
    interval_years: int = 5,
    domains: Iterable[str] = ("forest",),
    delimiter: Optional[str] = None,
) -> SurveyDataset:
    """Read a plot file into a validated :class:`SurveyDataset`.

    ``strata`` is a list of :class:`Stratum` or a path to a strata file.
    ``schema`` maps canonical column names to the names used in the file.
    Row numbers in error messages count the header as row 1.
    """
    if isinstance(strata, (str, Path)):
        strata = load_strata(strata)
    schema = dict(schema or {})
    domains = tuple(domains)
    col = {c: schema.get(c, c) for c in (*PLOT_COLUMNS, *OPTIONAL_PLOT_COLUMNS, *domains)}
    known_strata = {s.stratum_id for s in strata}

    fh, reader = _reader(path, delimiter)
    with fh:
        header = reader.fieldnames or []
        required = [c for c in PLOT_COLUMNS if c != "forest"] + list(domains)
        missing = [col[c] for c in required if col[c] not in header]
        if missing:
            raise InputError(f"{path}: missing column(s) {', '.join(missing)}")
        has_stock = col["c_stock"] in header

        clusters: dict = OrderedDict()
        seen = set()
        for row_no, row in enumerate(reader, start=2):
            get = lambda c: row[col[c]] if row[col[c]] is not None else ""
            try:
                cid = get("cluster_id").strip()
                if not cid:
                    raise InputError("column 'cluster_id': value required")
                j = _parse_num(get("subplot_index"), "subplot_index", row_no, int)
                if (cid, j) in seen:
                    raise InputError(f"duplicate sub-plot ({cid}, {j})")
                seen.add((cid, j))
                year = _parse_num(get("panel_year"), "panel_year", row_no, int)
                sid = get("stratum_id").strip()
                if sid not in known_strata:
                    raise InputError(f"unknown stratum_id {sid!r}")
                y = _parse_num(get("c_loss"), "c_loss", row_no)
                if y < 0:
                    raise InputError(f"negative loss c_loss={y}")
                flags = {d: _parse_bool(get(d), col[d], row_no) for d in domains}
                rec = SubPlotRecord(
                    cluster_id=cid,
                    subplot_index=j,
                    c_loss=y,
                    domain_flags=flags,
                    fcl_loss_year=_parse_num(get("fcl_loss_year"), "fcl_loss_year", row_no, int, True),
                    als_height=_parse_num(get("als_height"), "als_height", row_no, float, True),
                    als_year=_parse_num(get("als_year"), "als_year", row_no, int, True),
                    c_stock=_parse_num(get("c_stock"), "c_stock", row_no, float, True) if has_stock else None,
                )
                entry = clusters.setdefault(cid, [year, sid, []])
                if (entry[0], entry[1]) != (year, sid):
                    raise InputError(f"cluster {cid!r} has inconsistent panel_year/stratum_id")
                entry[2].append(rec)
            except InputError as exc:
                if exc.row is None:
                    raise InputError(str(exc), row_no) from None
                raise

    plots = [
        ClusterPlot(cid, year, sid, sorted(subs, key=lambda s: s.subplot_index))
        for cid, (year, sid, subs) in clusters.items()
    ]
    return SurveyDataset(strata=strata, plots=plots, interval_years=interval_years)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    return repr(v) if isinstance(v, float) else str(v)


def write_dataset(ds: SurveyDataset, path, domains: Iterable[str] = ("forest",)) -> None:
    """Write plots in the layout read by :func:`load_dataset` (plus ``c_stock``)."""
    domains = tuple(domains)
    columns = [c for c in PLOT_COLUMNS if c != "forest"] + list(domains) + list(OPTIONAL_PLOT_COLUMNS)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for p in ds.plots:
            for s in p.subplots:
                values = dict(
                    cluster_id=p.cluster_id, subplot_index=s.subplot_index, panel_year=p.panel_year,
                    stratum_id=p.stratum_id, c_loss=s.c_loss, fcl_loss_year=s.fcl_loss_year,
                    als_height=s.als_height, als_year=s.als_year, c_stock=s.c_stock,
                    **{d: s.domain_flags.get(d, False) for d in domains},
                )
                w.writerow([_cell(values[c]) for c in columns])


def write_strata(strata: Iterable[Stratum], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STRATA_COLUMNS)
        for s in strata:
            w.writerow([s.stratum_id, repr(float(s.area))])
