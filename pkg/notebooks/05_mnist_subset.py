"""
MNIST subset via IDX files
==========================

Writes data/mnist-2000-{images,labels}.idx (used by configs/mnist_small.cfg)
from the MNIST copy bundled with mlxtend, then runs both algorithms.
"""
# %%
import os

import numpy as np
from mlxtend.data import mnist_data

from fairfed import load_idx, parse_config, run_experiment
from fairfed.data import write_idx

x, y = mnist_data()
# interleave classes so any prefix is balanced
rank = np.empty(y.size, dtype=np.int64)
for c in np.unique(y):
    rank[y == c] = np.arange(np.sum(y == c))
order = np.lexsort((y, rank))[:2000]

os.makedirs("data", exist_ok=True)
write_idx("data/mnist-2000-images.idx", x[order].astype(np.uint8).reshape(-1, 28, 28))
write_idx("data/mnist-2000-labels.idx", y[order].astype(np.uint8))

ds = load_idx("data/mnist-2000-images.idx", "data/mnist-2000-labels.idx", 2000)
ds.features.shape, ds.group_counts()

# %%
for algo in ("fedavg", "mwr"):
    cfg = parse_config("configs/mnist_small.cfg", {"algorithm": algo})
    r = run_experiment(cfg, persist=False).final_report
    print(algo, "noisy-client TPRD", r.column("tprd")[3:].round(3))
