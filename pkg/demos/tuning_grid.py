"""
Tuning the step size and clipping level with a grid
===================================================

The grid runner takes a base config and a sweep of dotted field names.
Runs go to a worker pool (capped by BYZDP_THREADS) and each gets its own
seed. We pick the best setting and then summarise it over fresh seeds.
"""
import tempfile
from pathlib import Path

from byzdp import harness
from byzdp.aggregation import AggregatorSpec
from byzdp.algorithm import HyperParams
from byzdp.attack import AttackSpec

base = harness.RunConfig(
    algorithm="byz_clip21_sgd2m", G=6, byz_count=1, T=300, seed=0,
    problem=harness.ProblemSpec(d=10, sigma_noise=0.5),
    hp=HyperParams(gamma=0.1, tau=1.0),
    privacy=harness.PrivacySpec(sigma_omega=0.2),
    attack=AttackSpec("ipm"), agg=AggregatorSpec("coordinate_median", assumed_byz_count=1),
)

out = Path(tempfile.mkdtemp(prefix="byzdp-grid-"))
traces = harness.grid(base, {"hyperparams.gamma": [1, 0.1, 0.01], "hyperparams.tau": [1, 0.1]}, out_dir=out)
best = harness.select_best(traces)
print("index file:", out / "index.csv")
print("best gamma/tau:", best.config.hp.gamma, best.config.hp.tau, "tail:", round(best.tail_metric, 4))

# Re-run the winner on three seeds and report mean and sample std.
seeds = harness.grid(best.config, {"run.seed": [10, 11, 12]})
print(harness.table_to_csv(harness.summarize(seeds)))
