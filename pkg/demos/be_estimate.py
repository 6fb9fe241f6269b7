"""Basic expansion estimates from a small sampled inventory.

Draws one sample from a synthetic population, then computes annual totals,
their average over panels and the pooled total, and compares them with the
population truth.
"""

from cstockloss import DomainSelector, split_panels
from cstockloss.design import average_annual, be_annual, be_estimate
from cstockloss.simulation import PopulationConfig, draw_sample, generate_population
from cstockloss.survey import cluster_domain_mean

pop = generate_population(PopulationConfig(seed=1))
ds = draw_sample(pop, n=300, seed=2)
area = ds.strata[0].area
forest = DomainSelector("forest")

panels = {
    year: ([p.m for p in plots], [cluster_domain_mean(p, forest) for p in plots])
    for year, plots in split_panels(ds).items()
}
annual = be_annual(panels, area)
truth = pop.true_totals("forest")[0]

print("year   estimate (t)   SE%    truth (t)")
for (year, est), true in zip(annual.items(), truth):
    print(f"{year}  {est.total:13.0f}  {est.se_pct:5.1f}  {true:11.0f}")

avg = average_annual(annual)
m = [m for ms, _ in panels.values() for m in ms]
y = [v for _, ys in panels.values() for v in ys]
pooled = be_estimate(m, y, area)
print(f"average of annual: {avg.total:.0f} t (SE {avg.se_pct:.1f}%)")
print(f"pooled:            {pooled.total:.0f} t (SE {pooled.se_pct:.1f}%)")
