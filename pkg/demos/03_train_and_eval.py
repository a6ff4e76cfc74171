# %% [markdown]
# # Meta-training and evaluation
#
# 5-way 1-shot on synthetic clusters with 20 training classes. A few hundred
# iterations are enough to see the curve; the acceptance suite uses more.

# %%
from pathlib import Path

from dpgn import RunConfig, evaluate, fit, load_checkpoint
from dpgn.training import build_source

out = Path("demo_runs/train")
cfg = RunConfig().update(split="20,5,5", max_iters=400, eval_every=200, eval_tasks=200)
src = build_source(cfg)
result = fit(cfg, src, out_dir=out)
print("first / last loss", round(result.losses[0], 3), round(result.losses[-1], 3))
print("best val", result.best_val, "at", result.best_iteration)

# %%
model = load_checkpoint(out / "best.ckpt")
for transductive in (True, False):
    print(evaluate(src, cfg.episode_spec(transductive=transductive), model, num_tasks=500, seed=3))

# %% [markdown]
# The same run from the shell:
#
#     dpgn train --config demo_runs/train/config.txt --out demo_runs/train
#     dpgn eval --ckpt demo_runs/train/best.ckpt --tasks 1000 --seed 3
