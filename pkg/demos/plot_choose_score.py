"""
Choosing a score for a heavy-tailed outcome
===========================================

Rank U-statistic scores by their predicted sensitivity value when the pair
differences follow a shifted t distribution with 2 degrees of freedom, then
compare the prediction with the power of a sensitivity analysis.
"""

from sensval import AltModel, Rng, ScoreSpec, asymptotic_law, choose_score, power
from sensval.sim import USTAT_ROWS

alt = AltModel.t(2, 0.8)
specs = [ScoreSpec.wilcoxon()] + [ScoreSpec.ustat(*r) for r in USTAT_ROWS]

for I in (100, 500, float("inf")):
    report = choose_score(specs, alt, I, 0.05, rng=Rng(0))
    best = report.best
    print(f"I={I:<5g} best={best.spec} predicted kappa*={best.value:.3f} design sensitivity={best.mu_F / (1 - best.mu_F):.2f}")

# power at Gamma = 3 for the Wilcoxon score and the best U-statistic
for spec in (ScoreSpec.wilcoxon(), ScoreSpec.ustat(8, 6, 7)):
    law = asymptotic_law(spec, alt, rng=Rng(0))
    print(spec, [round(power(law, 0.05, I, 3.0, "finite"), 3) for I in (100, 250, 500, 1000)])
