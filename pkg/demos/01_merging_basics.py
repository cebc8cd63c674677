# %% [markdown]
# # Averaging weights, one fold at a time
#
# The base model is a running mean of the extractors finalized at each stage.
# Folding it in with weights (k-1)/k and 1/k gives exactly the offline mean,
# so nothing but the current average has to be kept around.

# %%
import numpy as np

from mnb import ParameterSet
from mnb.weightspace import IntraMergeAccumulator, ema_merge_step, intra_merge_step, uniform_merge_step

rng = np.random.default_rng(0)
stages = [ParameterSet({"w": rng.normal(size=(3, 2)), "b": rng.normal(size=2)}) for _ in range(4)]

base = None
for k, theta in enumerate(stages, start=1):
    base = uniform_merge_step(base, theta, k)

offline = np.mean([t["w"] for t in stages], axis=0)
print("fold vs offline mean, max abs diff:", np.abs(base["w"] - offline).max())

# %% [markdown]
# The same running mean is used inside a stage, where a snapshot is folded in
# every few epochs. The accumulator also counts how many snapshots it holds.

# %%
acc = IntraMergeAccumulator()
for theta in stages:
    acc = intra_merge_step(acc, theta)
print("snapshots merged:", acc.n)
print("same result as the inter-stage fold:", np.allclose(acc.theta_avg["w"], base["w"], rtol=1e-12))

# %% [markdown]
# An exponential moving average weighs the newest model by alpha instead.
# With alpha = 0.9 the first stage is nearly forgotten after three more folds.

# %%
ema = stages[0]
for theta in stages[1:]:
    ema = ema_merge_step(ema, theta, 0.9)
weights = [0.1 ** 3] + [0.9 * 0.1 ** (4 - j) for j in range(2, 5)]
print("EMA weight of each stage:", np.round(weights, 4))
print("matches the expansion:", np.allclose(ema["w"], sum(w * t["w"] for w, t in zip(weights, stages))))
