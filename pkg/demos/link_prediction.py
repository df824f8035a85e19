"""Predicting who will contact whom in the next time window.

We simulate reciprocal community traffic, train every model on the first
70% of events, and score all ordered pairs on whether they interact during
the following window.  Poisson rates only know how busy a pair has been;
the Hawkes models also know that a pair which was just contacted is likely
to answer soon.

Run:  python demos/link_prediction.py   (about a minute)
"""

import numpy as np

from hawkes_epm.evaluation import ExperimentConfig, run_experiment
from hawkes_epm.simulation import block_scenario, simulate

rng = np.random.default_rng(4)
scenario = block_scenario(V=50, alphas=(1.0, 1.5, 2.0), delta=0.45, rng=rng, n_events=5000,
                          community_rates=rng.uniform(0.0, 0.05, 3))
data, _ = simulate(scenario.params, scenario.T, rng)

config = ExperimentConfig(p_grid=(0.7,), pi_hat=1.0, seed=4, delta=0.45, K_max=20, sweeps=1000,
                          gibbs_iters=200)
report = run_experiment(data, config)

print(f"{'model':>18}  {'AUC-ROC':>8}  {'AUC-PR':>8}  seconds")
for row, timing in zip(report.rows, report.timings):
    print(f"{row['model']:>18}  {row['auc_roc']:8.3f}  {row['auc_pr']:8.3f}  "
          f"{timing['fit_seconds']:7.1f}  {row['status']}")
