"""Model-assisted estimates with FCL and ALS-FCL working models.

Fits the working models on one sample, builds the map aggregates from the
population grids, and reports the gain over the field-only estimate.
"""

from cstockloss import DomainSelector, split_panels
from cstockloss.assisted import (
    ma_total,
    relative_efficiency,
    residuals,
    synthetic_total_als_fcl,
    synthetic_total_fcl,
)
from cstockloss.design import be_estimate
from cstockloss.grid import aggregate
from cstockloss.models import AlsFclModel, PanelWindow, fit_cstock_model, fit_fcl_model, recode_fcl
from cstockloss.simulation import PopulationConfig, draw_sample, generate_population, population_grids
from cstockloss.survey import cluster_domain_mean

pop = generate_population(PopulationConfig(als_coverage=0.8, als_noise=0.5, seed=4))
ds = draw_sample(pop, n=600, seed=5)
area = ds.strata[0].area
everything = DomainSelector()

year = int(pop.years[-1])
w = PanelWindow(year)
plots = split_panels(ds)[year]
subs = [s for p in plots for s in p.subplots]

fcl = fit_fcl_model([s.c_loss for s in subs], [recode_fcl(s.fcl_loss_year, w) for s in subs])
pairs = [(s.als_height, s.c_stock) for p in ds.plots for s in p.subplots
         if s.als_height is not None and not (s.fcl_loss_year and s.als_year <= s.fcl_loss_year <= p.panel_year)]
cstock = fit_cstock_model(*zip(*pairs))
als = AlsFclModel(cstock, fcl)
print(f"FCL model: ybar_CL={fcl.ybar_cl:.2f}, ybar_N={fcl.ybar_n:.3f} t/ha/a")
print(f"stock model: {cstock.beta0:.2f} + {cstock.beta1:.2f} h + {cstock.beta2:.4f} h^2")

agg = aggregate(*population_grids(pop, len(pop.years) - 1), w)
be = be_estimate([p.m for p in plots], [cluster_domain_mean(p, everything) for p in plots], area)
ma_fcl = ma_total(synthetic_total_fcl(agg, fcl), residuals(plots, fcl, everything, w), area)
ma_als = ma_total(synthetic_total_als_fcl(agg, als), residuals(plots, als, everything, w), area)

print(f"truth {pop.true_totals()[0, -1]:.0f} t")
for name, est in (("BE", be), ("MA-FCL", ma_fcl), ("MA-ALS-FCL", ma_als)):
    re = "" if est is be else f"  RE {relative_efficiency(be, est):.2f}"
    print(f"{name:11s}{est.total:12.0f} t  SE {est.se_pct:5.1f}%{re}")
