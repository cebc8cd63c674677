# %% [markdown]
# # Looking inside a run
#
# Two diagnostics: the cosine between the extractor updates of different
# stages, and linear CKA between the features of the finalized models.
# Averaging and bounding pull stage updates in a common direction, which
# shows up as positive off-diagonal cosines.

# %%
import numpy as np

from mnb import metrics
from mnb.experiment import ExperimentConfig, run_experiment

bench = dict(num_classes=10, K=5, separation=2.0, memory=10, lr=0.01, B=2.0, seed=0)
ft = run_experiment(ExperimentConfig(method="FINETUNE", **bench))
mnb = run_experiment(ExperimentConfig(method="MNB", **bench))

np.set_printoptions(precision=2, suppress=True)
print("fine-tuning update cosines:\n", ft.task_cosine)
print("merge-and-bound update cosines:\n", mnb.task_cosine)
print("mean off-diagonal:", round(metrics.mean_off_diagonal(ft.task_cosine), 3),
      "vs", round(metrics.mean_off_diagonal(mnb.task_cosine), 3))

# %% [markdown]
# CKA of stage-1 test features across the later models. Values near 1 mean the
# representation of the first classes barely moved.

# %%
for name, r in (("FINETUNE", ft), ("MNB", mnb)):
    print(name, "CKA vs stage 1:", np.round(r.cka[1][0], 3))

# %% [markdown]
# Merged weights need fresh BN statistics. Restarting them from scratch on the
# small replay set (RESET) is much worse than continuing from the current
# estimates (OURS).

# %%
for strategy in ("OURS", "RESET", "NOCHANGE"):
    s = run_experiment(ExperimentConfig(method="MNB", bn_strategy=strategy, **bench)).summary
    print(f"{strategy:8s} forgetting {s['forgetting']:.3f}  avg inc acc {s['avg_inc_acc']:.3f}")
