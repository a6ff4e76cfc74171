# %% [markdown]
# # One forward pass through the dual graph
#
# Build an untrained model, push one 3-way 1-shot episode through it and
# look at what each generation keeps: point edges, distribution nodes and
# distribution edges.

# %%
import torch

from dpgn import DPGN, DPGNConfig, EpisodeSpec, make_synthetic_clusters, sample_episode
from dpgn.objectives import query_probabilities
from dpgn.training import episodes_to_tensors

torch.manual_seed(0)
cfg = DPGNConfig(n_way=3, k_shot=1, generations=3, emb_dim=16, input_shape=(16,))
model = DPGN(cfg).eval()
src = make_synthetic_clusters(12, 16, 6.0, rng=0, splits=(6, 3, 3))
ep = sample_episode(src, EpisodeSpec(3, 1, 3), rng=0)
x, sy, lab, qy = episodes_to_tensors([ep])

with torch.no_grad():
    out = model(x, sy, lab, qy)
hist = out.history
print("generations kept:", hist.generations)

# %% [markdown]
# Distribution nodes start as indicators for labeled supports and uniform
# rows for queries.

# %%
hist.distribution_nodes[0][0]

# %% [markdown]
# Every edge matrix is row-stochastic.

# %%
for l, (ep_, ed) in enumerate(zip(hist.point_edges, hist.distribution_edges), 1):
    print(l, ep_.sum(-1)[0].numpy().round(6), ed.sum(-1)[0].numpy().round(6))

# %% [markdown]
# Votes are sums of edge weights, each below 1, so an untrained model's
# softmax sits close to uniform.

# %%
print("query probabilities (untrained):")
print(query_probabilities(out)[0].numpy().round(4))
print("labels:", qy[0].tolist())
