"""
Laplace noise on shared group likelihoods
=========================================
"""
# %%
import numpy as np

from fairfed import PrivacyBudget, laplace_noise, parse_config, privatize_likelihoods, run_experiment
from fairfed.rng import stream

draws = laplace_noise(0.5, stream(0, "demo"), size=100_000)
draws.var(), 2 * 0.5 ** 2

# %%
vec = np.array([0.45, 0.55])
for eps in (0.0, 0.4, 0.8, None):
    budget = None if eps is None else PrivacyBudget(eps, 1 / 200)
    print(eps, privatize_likelihoods(vec, budget, stream(0, "dp")).round(4))

# %%
# the fairness metrics barely move under DP
for eps in (None, 0.4, 0.8):
    cfg = parse_config("configs/synthetic_benchmark.cfg", {"dp_epsilon": eps})
    r = run_experiment(cfg, persist=False).final_report
    print(eps, round(r.column("wtpr").mean(), 4), round(r.column("tprsd").mean(), 4))
