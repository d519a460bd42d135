"""
Screening many outcomes by sensitivity value
============================================

Screen 500 outcomes measured on the same 41 pairs, 25 of which carry a real
effect, and compare the sensitivity values with their null reference law.
"""

import numpy as np

from sensval import OutcomeMatrix, histogram_bins, qq_data, screen

rng = np.random.default_rng(0)
values = rng.normal(0.0, 1.0, (500, 41))
values[:25] += 1.2
matrix = OutcomeMatrix(tuple(f"gene{i:03d}" for i in range(500)), values)

table = screen(matrix, "wilcoxon", alpha=0.05)
print(f"null reference: center={table.null_center:.3f} sd={table.null_sd:.3f} at I={table.null_I:g}")
for row in table.ranked()[:10]:
    print(f"{row.rank:>3} {row.outcome} T={row.T:.3f} kappa*={row.kappa_two_sided:.3f} Gamma**={row.gamma_trunc:.2f}")

theo, obs, (center, sd) = qq_data(table)
excess = obs - (center + sd * theo)
print(f"largest departures above the null line: {np.round(np.sort(excess)[-5:], 3)}")

for lo, hi, count in histogram_bins(table, 0.05):
    if count:
        print(f"[{lo:.2f}, {hi:.2f}) {'#' * (count // 5)}")
