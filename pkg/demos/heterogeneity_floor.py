"""
The error floor grows with client heterogeneity
===============================================

Without privacy noise, a robust method under attack still stalls at a
neighbourhood whose size scales with zeta^2, the squared gradient
dissimilarity of the honest clients. Doubling zeta should roughly quadruple
the plateau of |grad f|^2.
"""
import numpy as np

from byzdp import harness
from byzdp.aggregation import AggregatorSpec
from byzdp.algorithm import HyperParams
from byzdp.attack import AttackSpec

plateau = {}
for zeta in (0.5, 1.0, 2.0):
    tails = []
    for seed in range(3):
        cfg = harness.RunConfig(
            algorithm="no_dp", G=8, byz_count=2, T=2000, seed=seed,
            problem=harness.ProblemSpec(d=20, zeta=zeta, sigma_noise=0.1),
            hp=HyperParams.no_dp(0.1, beta=0.1),
            attack=AttackSpec("ipm", 10.0),
            agg=AggregatorSpec("coordinate_median", nnm=True, assumed_byz_count=2),
        )
        tails.append(harness.run(cfg).tail_metric)
    plateau[zeta] = np.mean(tails)
    print(f"zeta = {zeta:<4} plateau = {plateau[zeta]:.4f}")

print("ratio for doubling zeta:", [round(float(plateau[2 * z] / plateau[z]), 2) for z in (0.5, 1.0)])
