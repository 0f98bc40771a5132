"""
Do noisy clients pull in a different direction?
===============================================

Spearman correlation between the clients' last-round gradients.
"""
# %%
from dataclasses import replace

import numpy as np

from fairfed import parse_config, run_experiment

cfg = parse_config("configs/synthetic_benchmark.cfg",
                   {"algorithm": "fedavg", "noise_plan": [0, 0, 0.8, 0.8], "gradient_diagnostic": True})
res = run_experiment(cfg, persist=False)
np.round(res.records[-1].gradient_spearman, 2)

# %%
# clean-clean against clean-noisy over a few seeds
for seed in range(5):
    m = run_experiment(replace(cfg, seed=seed), persist=False).records[-1].gradient_spearman
    print(seed, round(m[0, 1], 2), round(m[0, 2], 2))
