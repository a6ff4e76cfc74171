# %% [markdown]
# # Episodes
#
# A source is a set of classes split into train / val / test. An episode
# picks N classes from one split, K support shots per class (class-major)
# and T̄ queries.

# %%
import numpy as np

from dpgn import EpisodeSpec, make_synthetic_clusters, sample_episode

src = make_synthetic_clusters(num_classes=20, dim=16, separation=6.0, rng=0, splits=(12, 4, 4))
[len(src.classes_in(s)) for s in ("train", "val", "test")]

# %%
ep = sample_episode(src, EpisodeSpec(n_way=5, k_shot=2, n_query=5), rng=7)
print("support labels", ep.support_y)
print("query labels  ", ep.query_y)
print("episode classes", ep.classes)

# %% [markdown]
# Semi-supervised episodes keep a fraction of the support labels. With
# K=10 and ratio 0.2 each class keeps two labeled shots; the other eight
# still join the graph as unlabeled nodes.

# %%
semi = sample_episode(src, EpisodeSpec(5, 10, 5, labeled_ratio=0.2), rng=1)
semi.labeled.reshape(5, 10).astype(int)

# %% [markdown]
# How hard is a source? Nearest true class mean is the ceiling for any
# classifier. Separation 6 is nearly trivial, separation 2 is not.

# %%
for sep in (6.0, 2.0):
    s = make_synthetic_clusters(20, 16, sep, rng=1)
    rng = np.random.default_rng(0)
    y = rng.integers(0, 20, 2000)
    pts = s.means[y] + rng.normal(size=(2000, 16))
    pred = np.argmin(((pts[:, None] - s.means[None]) ** 2).sum(-1), axis=1)
    print(f"separation {sep}: nearest-mean accuracy over 20 classes {(pred == y).mean():.3f}")
