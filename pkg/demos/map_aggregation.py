"""Map aggregation: from per-pixel grids to the areas the synthetic total needs.

Writes a small FCL/ALS grid set, aggregates it for an annual and a pooled
window, and renders the per-pixel prediction map whose sum equals the
synthetic total.
"""

import tempfile
from pathlib import Path

import numpy as np

from cstockloss.grid import GridRaster, aggregate, load_grid, map_total, synthetic_map, write_grid
from cstockloss.models import AlsFclModel, CstockModelParams, FclModelParams, PanelWindow

rng = np.random.default_rng(0)
shape = (40, 50)
loss = np.where(rng.random(shape) < 0.03, rng.integers(2009, 2019, shape), 0)
covered = rng.random(shape) < 0.6
height = np.where(covered, rng.uniform(5, 25, shape), np.nan)
als_year = np.where(covered, 2011, np.nan)

out = Path(tempfile.mkdtemp())
for name, values in (("fcl", loss), ("height", height), ("als_year", als_year)):
    write_grid(GridRaster.from_array(values, 0.09), out / f"{name}.grid")
fcl, h, y = (load_grid(out / f"{n}.grid") for n in ("fcl", "height", "als_year"))

# ALS flown in 2011 is usable for the 2018 panel but too recent for the pooled window.
for w in (PanelWindow(2018), PanelWindow.pooled(2014, 2018)):
    a = aggregate(fcl, h, y, w)
    xbar = "-" if a.xbar_l is None else f"{a.xbar_l:.2f} m"
    print(f"window {w.key:9s} lam={a.lam:.2f} ha  lam_CL={a.lam_cl:.2f}  lam_L={a.lam_l:.2f}  "
          f"lam_N={a.lam_n:.2f}  xbar_L={xbar}")

model = AlsFclModel(CstockModelParams(1.18, 8.57, 0.087), FclModelParams(17.15, 0.32))
pred = synthetic_map(fcl, h, y, model, PanelWindow(2018))
write_grid(pred, out / "map_2018.grid")
print(f"synthetic total from the map: {map_total(pred):.1f} t/a")
print(f"grids written to {out}")
