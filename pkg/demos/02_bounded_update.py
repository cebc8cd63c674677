# %% [markdown]
# # Keeping a stage close to its base model
#
# During a stage the shared weights (extractor and the head rows of old
# classes) may drift at most B away from the base model in L2 norm. When they
# go further, the displacement is scaled back onto the ball.

# %%
import numpy as np

from mnb import ParameterSet
from mnb.weightspace import bound_update, displacement

base = ParameterSet({"w": np.zeros(2), "new_head": np.zeros(1)})
theta = ParameterSet({"w": np.array([3.0, 4.0]), "new_head": np.array([7.0])})
shared = ["w"]

_, before = displacement(theta, base, shared)
out = bound_update(theta, base, shared, bound=1.0)
_, after = displacement(out, base, shared)
print(f"displacement {before:.3f} -> {after:.3f}")
print("projected w:", out["w"], "(same direction as [3, 4])")
print("non-shared rows pass through:", out["new_head"])

# %% [markdown]
# Inside the ball the update is left alone.

# %%
same = bound_update(theta, base, shared, bound=10.0)
print("unchanged inside the ball:", same["w"].tobytes() == theta["w"].tobytes())

# %% [markdown]
# In a real run the bound fires at epoch ends, every e_b epochs. The stage
# report records the displacement before and after each projection.

# %%
from mnb.experiment import ExperimentConfig, run_experiment

cfg = ExperimentConfig(num_classes=6, K=3, separation=2.5, epochs=6, e_b=2, B=0.5, seed=1)
result = run_experiment(cfg)
for rep in result.reports[1:]:
    for e in rep.epochs:
        if "disp_before" in e:
            print(f"stage {rep.stage} epoch {e['epoch']}: {e['disp_before']:.3f} -> {e['disp_after']:.3f}")
