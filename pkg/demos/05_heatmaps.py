# %% [markdown]
# # Per-generation votes
#
# For one 5-way episode, the class votes each query receives at each
# generation. Each PNG is drawn from the CSV next to it.

# %%
import numpy as np

from dpgn import load_checkpoint
from dpgn.analysis import generation_heatmaps, spec_for
from dpgn.training import build_source

model = load_checkpoint("demo_runs/train/best.ckpt")
maps, preds, episode = generation_heatmaps(model, build_source(model.run_config),
                                           spec_for(model, transductive=True), seed=5,
                                           out_dir="demo_runs/heatmap")
np.set_printoptions(precision=3, suppress=True)
print("generation 1\n", maps[0])
print(f"generation {len(maps)}\n", maps[-1])
print("predictions", preds, "labels", episode.query_y)
