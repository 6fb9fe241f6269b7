"""Plain-text grids and their reduction to population aggregates.

Grid file layout::

    ncols 3
    nrows 2
    cellarea_ha 0.09
    nodata -9999
    2015 0 0
    -9999 2017 0

Cells equal to ``nodata`` are missing. In a forest-cover-loss grid a value of
0 means "no loss mapped"; missing cells are outside the population.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from cstockloss.assisted import PopulationAggregates
from cstockloss.errors import GridError
from cstockloss.models import (
    AlsFclModel,
    PanelWindow,
    als_eligible_array,
    recode_fcl_array,
)

log = logging.getLogger(__name__)

_HEADER = ("ncols", "nrows", "cellarea_ha", "nodata")


@dataclass(frozen=True)
class GridRaster:
    ncols: int
    nrows: int
    cell_area: float
    values: np.ndarray  # shape (nrows, ncols), NaN = no data
    nodata: float = -9999.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size != self.ncols * self.nrows:
            raise GridError(
                f"grid has {v.size} cells, header declares {self.ncols}x{self.nrows}"
            )
        if not self.cell_area > 0:
            raise GridError("cell area must be > 0")
        object.__setattr__(self, "values", v.reshape(self.nrows, self.ncols))

    @classmethod
    def from_array(cls, values, cell_area: float, nodata: float = -9999.0) -> "GridRaster":
        v = np.atleast_2d(np.asarray(values, dtype=float))
        return cls(v.shape[1], v.shape[0], cell_area, v, nodata)

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def same_shape(self, other: "GridRaster") -> bool:
        return (self.ncols, self.nrows) == (other.ncols, other.nrows) and np.isclose(
            self.cell_area, other.cell_area
        )


def load_grid(path) -> GridRaster:
    try:
        lines = Path(path).read_text(encoding="utf-8").split("\n")
    except OSError as exc:
        raise GridError(str(exc)) from None
    header = {}
    body_start = 0
    for i, line in enumerate(lines):
        parts = line.split()
        if not parts:
            continue
        if parts[0].lower() in _HEADER:
            if len(parts) != 2:
                raise GridError(f"{path}: malformed header line {i + 1}: {line!r}")
            header[parts[0].lower()] = parts[1]
            body_start = i + 1
        else:
            break
    missing = [h for h in _HEADER if h not in header]
    if missing:
        raise GridError(f"{path}: header lacks {', '.join(missing)}")
    try:
        ncols, nrows = int(header["ncols"]), int(header["nrows"])
        cell_area, nodata = float(header["cellarea_ha"]), float(header["nodata"])
        cells = np.array(" ".join(lines[body_start:]).split(), dtype=float)
    except ValueError as exc:
        raise GridError(f"{path}: {exc}") from None
    if cells.size != ncols * nrows:
        raise GridError(f"{path}: header declares {ncols * nrows} cells, body has {cells.size}")
    cells[cells == nodata] = np.nan
    return GridRaster(ncols, nrows, cell_area, cells, nodata)


def write_grid(grid: GridRaster, path, fmt: str = "%.10g") -> None:
    v = np.where(np.isnan(grid.values), grid.nodata, grid.values)
    rows = "\n".join(" ".join(fmt % x for x in row) for row in v)
    Path(path).write_text(
        f"ncols {grid.ncols}\nnrows {grid.nrows}\ncellarea_ha {grid.cell_area:.10g}\n"
        f"nodata {grid.nodata:.10g}\n{rows}\n",
        encoding="utf-8",
    )


def _classify(fcl_years, als_height, als_year, w):
    """Return (in_population, loss flag, ALS-usable flag, heights) as flat arrays."""
    grids = [g for g in (als_height, als_year) if g is not None]
    if (als_height is None) != (als_year is None):
        raise GridError("ALS height and ALS year grids must be supplied together")
    for g in grids:
        if not fcl_years.same_shape(g):
            raise GridError("grid dimensions or cell areas differ")
    fy = fcl_years.values.ravel()
    pop = ~np.isnan(fy)
    dropped = int((~pop).sum())
    if dropped:
        log.info("%d no-data FCL cells excluded from the population", dropped)
    flags = pop & recode_fcl_array(np.where(fy > 0, fy, np.nan), w)
    if als_height is None:
        return pop, flags, np.zeros_like(flags), np.full(fy.shape, np.nan)
    h = als_height.values.ravel()
    eligible = als_eligible_array(als_year.values.ravel(), w)
    bad = flags & eligible & np.isnan(h)
    if bad.any():
        raise GridError(
            f"{int(bad.sum())} loss cell(s) have usable ALS year but no height"
        )
    return pop, flags, flags & eligible, h


def aggregate(
    fcl_years: GridRaster,
    als_height: Optional[GridRaster] = None,
    als_year: Optional[GridRaster] = None,
    w: PanelWindow = None,
    stratum_id: Optional[str] = None,
) -> PopulationAggregates:
    pop, flags, covered, h = _classify(fcl_years, als_height, als_year, w)
    a = fcl_years.cell_area
    n_l = int(covered.sum())
    return PopulationAggregates(
        lam=a * int(pop.sum()),
        lam_cl=a * int((flags & ~covered).sum()),
        lam_n=a * int((pop & ~flags).sum()),
        lam_l=a * n_l,
        xbar_l=float(h[covered].mean()) if n_l else None,
        stratum_id=stratum_id,
        window=w,
    )


def covered_heights(fcl_years, als_height, als_year, w) -> np.ndarray:
    """Heights of the cells counted in ``lam_l`` (for pixel-sum synthetic totals)."""
    _, _, covered, h = _classify(fcl_years, als_height, als_year, w)
    return h[covered]


def synthetic_map(
    fcl_years: GridRaster,
    als_height: Optional[GridRaster],
    als_year: Optional[GridRaster],
    model,
    w: PanelWindow,
) -> GridRaster:
    """Per-cell model prediction (t/ha/a); cells outside the population are NaN."""
    pop, flags, covered, h = _classify(fcl_years, als_height, als_year, w)
    if isinstance(model, AlsFclModel):
        pred = model.predict(flags, covered, h)
    else:
        pred = model.predict(flags)
    pred = np.where(pop, pred, np.nan)
    return GridRaster(fcl_years.ncols, fcl_years.nrows, fcl_years.cell_area, pred, fcl_years.nodata)


def map_total(grid: GridRaster) -> float:
    return float(np.nansum(grid.values) * grid.cell_area)
