# %% [markdown]
# # Config files, the command line and checkpoints
#
# Runs are described by plain ``key = value`` files. The ``mnb`` command runs
# them, sweeps one knob, and prints checkpoint contents. Here we drive it from
# Python so the demo stays self-contained.

# %%
import tempfile
from pathlib import Path

from mnb import ckpt
from mnb.cli import main

work = Path(tempfile.mkdtemp())
cfg = work / "small.cfg"
cfg.write_text(
    "# ten blob classes over five stages\n"
    "separation = 2.0\nmemory = 10\nlr = 0.01\nB = 2.0\nseed = 0\n",
    encoding="utf-8",
)

main(["run", "--config", str(cfg), "--out_dir", str(work / "run")])
print(sorted(p.name for p in (work / "run").iterdir()))

# %% [markdown]
# ``config.resolved`` echoes every setting, so it reruns the same experiment.

# %%
print((work / "run" / "config.resolved").read_text().splitlines()[:6])

# %% [markdown]
# A sweep writes one run directory per value plus a summary table.

# %%
main(["sweep", "--config", str(cfg), "--axis", "B", "--values", "0.5,2,8", "--out_dir", str(work / "sweep")])
print((work / "sweep" / "sweep_summary.csv").read_text())

# %% [markdown]
# Checkpoints are little-endian binary files. Stage files hold the whole
# model, base files only the averaged parameters.

# %%
main(["inspect-ckpt", str(work / "run" / "base_3.mnbw")])
model = ckpt.load(work / "run" / "stage_5.mnbw")
print(model, "classes", model.class_ids)
