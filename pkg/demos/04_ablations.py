# %% [markdown]
# # Ablations: masking the distribution graph, counting generations
#
# Needs the checkpoint written by `03_train_and_eval.py`.

# %%
from dpgn import load_checkpoint
from dpgn.analysis import ablate_distribution, spec_for, sweep_generations
from dpgn.training import build_source

model = load_checkpoint("demo_runs/train/best.ckpt")
src = build_source(model.run_config)
spec = spec_for(model)
reports = ablate_distribution(model, src, spec, list(range(6)), tasks=300, seed=0,
                              out_dir="demo_runs/ablate")
for r in reports:
    print(r.kept_dims, f"{r.mean_acc:.2f} +- {r.ci95:.2f}")

# %% [markdown]
# Generation sweep. Point 0 is one generation with the distribution-to-point
# path cut, so the point graph never sees distribution information.
# Each point is trained from scratch, so this cell takes a while.

# %%
cfg = model.run_config.update(max_iters=300, eval_every=0)
for g, r in sweep_generations(cfg, [1, 2, 4, 6], tasks=300, out_dir="demo_runs/sweep"):
    print(g, f"{r.mean_acc:.2f} +- {r.ci95:.2f}")
