"""Dual complete graph: point graph and distribution graph with cyclic updates.

Shapes use a leading graph-batch dimension ``B``:

* point nodes ``(B, T, m)``, point edges ``(B, T, T)``
* distribution nodes ``(B, T, NK)``, distribution edges ``(B, T, T)``

Supports occupy rows/columns ``0..NK-1`` in class-major order.  One generation
runs P2D -> distribution edges -> D2P -> point edges, so the point edges of
generation ``l`` already see the distribution graph of generation ``l``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import EmbeddingNet, embed
from .config import DPGNConfig

NORM_FLOOR = 1e-8


def pairwise_sq_diff(nodes: torch.Tensor) -> torch.Tensor:
    """``(B, T, C) -> (B, C, T, T)`` with entry ``[b, c, i, j] = (x_ic - x_jc)^2``."""
    diff = nodes.unsqueeze(2) - nodes.unsqueeze(1)
    return diff.pow(2).permute(0, 3, 1, 2)


def row_normalize(edges: torch.Tensor) -> torch.Tensor:
    return edges / edges.sum(-1, keepdim=True).clamp_min(NORM_FLOOR)


class EdgeEncoder(nn.Module):
    """Squared node difference -> edge score in (0, 1).

    Two 1x1 Conv-BN-ReLU blocks at the input width, then a 1x1 conv to one
    channel and a sigmoid.  Applied independently to every ordered pair.
    """

    def __init__(self, in_dim: int):
        super().__init__()
        self.in_dim = in_dim
        self.net = nn.Sequential(
            nn.Conv2d(in_dim, in_dim, 1, bias=False),
            nn.BatchNorm2d(in_dim),
            nn.ReLU(),
            nn.Conv2d(in_dim, in_dim, 1, bias=False),
            nn.BatchNorm2d(in_dim),
            nn.ReLU(),
            nn.Conv2d(in_dim, 1, 1),
        )

    def forward(self, sq_diff: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.net(sq_diff)).squeeze(1)


class ClassPooledEdgeEncoder(nn.Module):
    """Distribution-edge encoder that ignores the order of shots within a class.

    The ``NK`` squared-difference channels are reduced to the per-class mean
    and max over shots (``2N`` channels) before the usual two Conv-BN-ReLU
    blocks and sigmoid.  With ``K = 1`` both statistics equal the input.
    """

    def __init__(self, n_way: int, k_shot: int):
        super().__init__()
        self.n_way, self.k_shot = n_way, k_shot
        self.in_dim = n_way * k_shot
        self.encoder = EdgeEncoder(2 * n_way)

    def forward(self, sq_diff: torch.Tensor) -> torch.Tensor:
        b, _, t, u = sq_diff.shape
        per_class = sq_diff.reshape(b, self.n_way, self.k_shot, t, u)
        pooled = torch.cat([per_class.mean(2), per_class.amax(2)], dim=1)
        return self.encoder(pooled)


def distribution_edge_encoder(cfg: DPGNConfig) -> nn.Module:
    if cfg.support_tying == "exchangeable":
        return ClassPooledEdgeEncoder(cfg.n_way, cfg.k_shot)
    return EdgeEncoder(cfg.num_support)


def edge_scores(nodes: torch.Tensor, encoder) -> torch.Tensor:
    if not torch.isfinite(nodes).all():
        raise ValueError("non-finite node features")
    return encoder(pairwise_sq_diff(nodes))


def init_point_edges(nodes: torch.Tensor, encoder) -> torch.Tensor:
    return row_normalize(edge_scores(nodes, encoder))


def update_point_edges(nodes: torch.Tensor, prev_edges: torch.Tensor, encoder) -> torch.Tensor:
    return row_normalize(edge_scores(nodes, encoder) * prev_edges)


# distribution edges use the same encoder form over NK-dim distribution nodes
init_distribution_edges = init_point_edges
update_distribution_edges = update_point_edges


def init_distribution_nodes(
    support_y: torch.Tensor,
    labeled: torch.Tensor,
    num_samples: int,
    dtype=torch.float32,
) -> torch.Tensor:
    """Generation-0 distribution nodes, ``(B, T, NK)``.

    A labeled support row holds ``delta(y_i, y_j)`` for every labeled support
    ``j`` (it sums to the labeled shot count of its class, ``K`` in the fully
    supervised case).  Unlabeled supports and queries get the uniform row
    ``1/NK`` (sums to 1).  Unlabeled support columns stay zero in labeled rows
    so no hidden label leaks in.
    """
    if support_y.shape != labeled.shape:
        raise ValueError(
            f"label/mask length mismatch: {tuple(support_y.shape)} vs {tuple(labeled.shape)}"
        )
    b, nk = support_y.shape
    if num_samples < nk:
        raise ValueError("num_samples must cover the support set")
    labeled = labeled.bool()
    nodes = torch.full((b, num_samples, nk), 1.0 / nk, dtype=dtype, device=support_y.device)
    same = (support_y.unsqueeze(2) == support_y.unsqueeze(1)).to(dtype)
    same = same * labeled.unsqueeze(1).to(dtype)
    sup = torch.where(labeled.unsqueeze(2), same, nodes[:, :nk])
    return torch.cat([sup, nodes[:, nk:]], dim=1)


class P2D(nn.Module):
    """Point-to-distribution aggregation: ``ReLU(W [e_i,1..NK || v_i] + b)``.

    ``tying="dense"`` is an unconstrained ``2NK -> NK`` linear layer.
    ``tying="exchangeable"`` constrains each ``NK x NK`` half of ``W`` to
    ``a I + s S + g J`` (``S`` same-class block mask, ``J`` all ones) with a
    shared bias, which makes the layer commute with any permutation of shots
    within a class and with relabelling of classes.
    """

    def __init__(self, n_way: int, k_shot: int, tying: str = "exchangeable"):
        super().__init__()
        self.n_way, self.k_shot, self.tying = n_way, k_shot, tying
        nk = n_way * k_shot
        if tying == "dense":
            self.fc = nn.Linear(2 * nk, nk)
        elif tying == "exchangeable":
            # rows: edge half, node half; cols: self, same class, all
            coef = torch.zeros(2, 3)
            coef[:, 0] = 1.0
            self.coef = nn.Parameter(coef)
            self.bias = nn.Parameter(torch.zeros(1))
            cls = torch.arange(nk) // k_shot
            self.register_buffer("same_class", (cls[:, None] == cls[None, :]).float(), persistent=False)
        else:
            raise ValueError(f"unknown tying {tying!r}")

    def dense_weight(self) -> torch.Tensor:
        """Effective ``(NK, 2NK)`` weight matrix."""
        if self.tying == "dense":
            return self.fc.weight
        nk = self.n_way * self.k_shot
        eye = torch.eye(nk, dtype=self.coef.dtype, device=self.coef.device)
        same = self.same_class.to(self.coef.dtype)
        ones = torch.ones_like(eye)
        halves = [c[0] * eye + c[1] * same + c[2] * ones for c in self.coef]
        return torch.cat(halves, dim=1)

    def dense_bias(self) -> torch.Tensor:
        if self.tying == "dense":
            return self.fc.bias
        return self.bias.expand(self.n_way * self.k_shot)

    def forward(self, edge_slice: torch.Tensor, prev_nodes: torch.Tensor) -> torch.Tensor:
        nk = self.n_way * self.k_shot
        if edge_slice.shape[-1] != nk or prev_nodes.shape[-1] != nk:
            raise ValueError(f"P2D expects width {nk}, got {edge_slice.shape[-1]}/{prev_nodes.shape[-1]}")
        x = torch.cat([edge_slice, prev_nodes], dim=-1)
        return F.relu(F.linear(x, self.dense_weight(), self.dense_bias()))


def p2d_aggregate(point_edges: torch.Tensor, prev_dist_nodes: torch.Tensor, p2d: P2D) -> torch.Tensor:
    nk = prev_dist_nodes.shape[-1]
    return p2d(point_edges[..., :nk], prev_dist_nodes)


class D2P(nn.Module):
    """Distribution-to-point aggregation.

    ``[sum_j e^d_ij v_j || v_i]`` (width ``2m``) through two 1x1 Conv-BN-ReLU
    blocks, ``2m -> 2m -> m``.
    """

    def __init__(self, emb_dim: int):
        super().__init__()
        self.emb_dim = emb_dim
        self.net = nn.Sequential(
            nn.Conv1d(2 * emb_dim, 2 * emb_dim, 1, bias=False),
            nn.BatchNorm1d(2 * emb_dim),
            nn.ReLU(),
            nn.Conv1d(2 * emb_dim, emb_dim, 1, bias=False),
            nn.BatchNorm1d(emb_dim),
            nn.ReLU(),
        )

    def forward(self, dist_edges: torch.Tensor, nodes: torch.Tensor) -> torch.Tensor:
        if dist_edges.shape[-1] != nodes.shape[-2] or nodes.shape[-1] != self.emb_dim:
            raise ValueError(
                f"shape mismatch: edges {tuple(dist_edges.shape)}, nodes {tuple(nodes.shape)}"
            )
        agg = torch.bmm(dist_edges, nodes)
        x = torch.cat([agg, nodes], dim=-1).transpose(1, 2)
        return self.net(x).transpose(1, 2)


def d2p_aggregate(dist_edges: torch.Tensor, prev_nodes: torch.Tensor, d2p: D2P) -> torch.Tensor:
    return d2p(dist_edges, prev_nodes)


class Generation(nn.Module):
    def __init__(self, cfg: DPGNConfig):
        super().__init__()
        self.point_edge = EdgeEncoder(cfg.emb_dim)
        self.p2d = P2D(cfg.n_way, cfg.k_shot, cfg.support_tying)
        self.dist_edge = distribution_edge_encoder(cfg)
        self.d2p = D2P(cfg.emb_dim)


class GenerationModules(nn.Module):
    """Initial edge encoders plus one parameter set per generation."""

    def __init__(self, cfg: DPGNConfig):
        super().__init__()
        self.init_point_edge = EdgeEncoder(cfg.emb_dim)
        self.init_dist_edge = distribution_edge_encoder(cfg)
        count = 1 if cfg.share_generations else cfg.generations
        self.generations = nn.ModuleList(Generation(cfg) for _ in range(count))
        self.shared = cfg.share_generations

    def __getitem__(self, l: int) -> Generation:
        """Parameters for generation ``l`` (1-based)."""
        if l < 1:
            raise IndexError("generation index starts at 1")
        if self.shared:
            return self.generations[0]
        if l > len(self.generations):
            raise IndexError(f"generation {l} out of range (have {len(self.generations)})")
        return self.generations[l - 1]


@dataclass
class GraphHistory:
    """Edge and node states for generations ``1..L`` plus the generation-0 init.

    ``point_edges[l-1]`` is ``E^p_l``; the ``*_nodes`` lists start at generation 0.
    """

    init_point_edges: torch.Tensor
    init_distribution_edges: torch.Tensor
    point_edges: list[torch.Tensor] = field(default_factory=list)
    distribution_edges: list[torch.Tensor] = field(default_factory=list)
    point_nodes: list[torch.Tensor] = field(default_factory=list)
    distribution_nodes: list[torch.Tensor] = field(default_factory=list)

    @property
    def generations(self) -> int:
        return len(self.point_edges)


def mask_dims(dist_nodes: torch.Tensor, kept_dims: int | None) -> torch.Tensor:
    """Zero every distribution-node dimension from ``kept_dims`` on."""
    if kept_dims is None:
        return dist_nodes
    nk = dist_nodes.shape[-1]
    if not 0 <= kept_dims <= nk:
        raise ValueError(f"kept_dims must lie in [0, {nk}], got {kept_dims}")
    keep = torch.zeros(nk, dtype=dist_nodes.dtype, device=dist_nodes.device)
    keep[:kept_dims] = 1
    return dist_nodes * keep


def run_generations(
    point_nodes: torch.Tensor,
    support_y: torch.Tensor,
    labeled: torch.Tensor,
    modules: GenerationModules,
    generations: int,
    kept_dims: int | None = None,
    bypass_d2p: bool = False,
) -> GraphHistory:
    """Initialise both graphs and run ``generations`` update cycles.

    ``kept_dims`` masks the distribution nodes fed to the distribution-edge
    encoders (inference ablation); ``bypass_d2p`` carries point nodes through
    unchanged.
    """
    if generations < 1:
        raise ValueError("at least one generation is required")
    t = point_nodes.shape[1]
    dist_nodes = init_distribution_nodes(support_y, labeled, t, dtype=point_nodes.dtype)
    ep = init_point_edges(point_nodes, modules.init_point_edge)
    ed = init_distribution_edges(mask_dims(dist_nodes, kept_dims), modules.init_dist_edge)
    hist = GraphHistory(ep, ed, point_nodes=[point_nodes], distribution_nodes=[dist_nodes])
    for l in range(1, generations + 1):
        gen = modules[l]
        dist_nodes = p2d_aggregate(ep, dist_nodes, gen.p2d)
        ed = update_distribution_edges(mask_dims(dist_nodes, kept_dims), ed, gen.dist_edge)
        if not bypass_d2p:
            point_nodes = d2p_aggregate(ed, point_nodes, gen.d2p)
        ep = update_point_edges(point_nodes, ep, gen.point_edge)
        hist.point_edges.append(ep)
        hist.distribution_edges.append(ed)
        hist.point_nodes.append(point_nodes)
        hist.distribution_nodes.append(dist_nodes)
    return hist


@dataclass
class DPGNOutput:
    """Graph history plus the bookkeeping needed to read per-sample votes.

    ``history`` covers ``G`` graphs: ``G = B`` transductively, ``G = B * Tq``
    with one query per graph otherwise.  ``support_y``/``labeled`` are per
    graph; ``labels`` holds ground truth for every graph row when known.
    """

    history: GraphHistory
    support_y: torch.Tensor
    labeled: torch.Tensor
    labels: torch.Tensor | None
    n_way: int
    batch: int
    n_query: int
    transductive: bool


class DPGN(nn.Module):
    """Embedding network plus dual-graph generations."""

    def __init__(self, cfg: DPGNConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = EmbeddingNet(
            cfg.backbone, cfg.input_shape, cfg.emb_dim, hidden=cfg.hidden, dropout=cfg.dropout,
            depth=cfg.mlp_depth,
        )
        self.graph = GenerationModules(cfg)
        self.bypass_d2p = False

    def forward(
        self,
        x: torch.Tensor,
        support_y: torch.Tensor,
        labeled: torch.Tensor,
        query_y: torch.Tensor | None = None,
        transductive: bool | None = None,
        kept_dims: int | None = None,
    ) -> DPGNOutput:
        """``x`` is ``(B, T, *input_shape)`` with the ``NK`` supports first."""
        cfg = self.cfg
        transductive = cfg.transductive if transductive is None else transductive
        b, t = x.shape[:2]
        nk = support_y.shape[1]
        if nk != cfg.num_support:
            raise ValueError(f"model built for {cfg.num_support} supports, episode has {nk}")
        tq = t - nk
        nodes = embed(self.backbone, x)
        labels = None
        if query_y is not None:
            labels = torch.cat([support_y, query_y], dim=1)
        if transductive:
            g_nodes, g_sy, g_lab = nodes, support_y, labeled
        else:
            sup = nodes[:, :nk].unsqueeze(1).expand(b, tq, nk, nodes.shape[-1])
            qry = nodes[:, nk:].unsqueeze(2)
            g_nodes = torch.cat([sup, qry], dim=2).reshape(b * tq, nk + 1, -1)
            g_sy = support_y.repeat_interleave(tq, dim=0)
            g_lab = labeled.repeat_interleave(tq, dim=0)
            if labels is not None:
                sup_y = support_y.unsqueeze(1).expand(b, tq, nk)
                labels = torch.cat([sup_y, query_y.unsqueeze(2)], dim=2).reshape(b * tq, nk + 1)
        hist = run_generations(
            g_nodes, g_sy, g_lab, self.graph, cfg.generations,
            kept_dims=kept_dims, bypass_d2p=self.bypass_d2p,
        )
        return DPGNOutput(hist, g_sy, g_lab, labels, cfg.n_way, b, tq, transductive)


def export_edge_history(hist: GraphHistory, out_dir, graph: int = 0) -> list:
    """Write ``gen<l>_ep.csv`` / ``gen<l>_ed.csv`` for generations ``0..L`` of one graph."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    eps = [hist.init_point_edges] + hist.point_edges
    eds = [hist.init_distribution_edges] + hist.distribution_edges
    for l, (ep, ed) in enumerate(zip(eps, eds)):
        for tag, mat in (("ep", ep), ("ed", ed)):
            path = out / f"gen{l}_{tag}.csv"
            np.savetxt(path, mat[graph].detach().cpu().numpy(), delimiter=",", fmt="%.8g")
            written.append(path)
    return written
