"""
Multiplicative weights and importance weights
=============================================
"""
# %%
import numpy as np

from fairfed import compute_importance, init_lambda, mw_update, normalize_weights

lam = init_lambda([0.5, 0.5])
losses = np.array([0.2, 0.9])  # group 1 is doing worse

# a negative eta_mu grows the weight of the high-loss group
for t in range(5):
    lam = mw_update(lam, losses, -0.3)
    print(t, lam.values.round(4))

# %%
# importance = lambda / mixture; with mixture == priors the weights follow lambda
w = compute_importance(lam, [0.5, 0.5])
w.raw, w.normalized

# %%
# per-batch normalization: share of the total weight held by each group
groups = np.array([0, 0, 0, 1])
normalize_weights(w.raw[groups], groups, 2)

# %%
# eta_mu = 0 leaves lambda untouched, bit for bit
lam0 = init_lambda([0.3, 0.7])
mw_update(lam0, losses, 0.0).values.tobytes() == lam0.values.tobytes()
