# %% [markdown]
# # Labeled-ratio sweep
#
# 5-way 10-shot where only a fraction of each class's shots keep labels.
# One model is trained per ratio. Short budgets here; see the acceptance
# suite for the longer run.

# %%
from dpgn import RunConfig
from dpgn.analysis import semisupervised_sweep

cfg = RunConfig().update(k_shot=10, separation=3.0, split="20,5,5", max_iters=150,
                         episodes_per_iter=8, eval_every=0)
for ratio, rep in semisupervised_sweep(cfg, [0.2, 0.4, 0.6, 1.0], tasks=200, out_dir="demo_runs/semisup"):
    print(f"{ratio:.1f}: {rep.mean_acc:.2f} +- {rep.ci95:.2f}")
