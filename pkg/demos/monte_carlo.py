"""Repeated sampling from one synthetic population.

Checks that the estimators are unbiased and that their variance estimates
match the empirical variance, then prints the summary table.
"""

from cstockloss.simulation import PopulationConfig, SimulationPlan, run_replications

cfg = PopulationConfig(seed=20201)
plan = SimulationPlan(n=150, scopes=("pooled", "average"))
report = run_replications(cfg, plan, R=500)

print(f"{'estimator':22s}{'rel bias':>10s}{'3 MCSE':>9s}{'V ratio':>9s}{'RE':>7s}{'fail':>6s}")
for key in sorted(report.summaries):
    s = report[key]
    re = "" if key.startswith("BE") else f"{s.mean_re:.2f}"
    print(f"{key:22s}{s.rel_bias:+10.4f}{3 * s.rel_mcse:9.4f}{s.var_ratio:9.3f}{re:>7s}{s.failures:6d}")

problems = report.check()
print("check:", "all properties hold" if not problems else problems)
