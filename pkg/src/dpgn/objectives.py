"""Edge-vote predictions and the point / distribution losses."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .graph import DPGNOutput


def class_votes(
    edge_rows: torch.Tensor,
    support_y: torch.Tensor,
    labeled: torch.Tensor,
    n_way: int,
) -> torch.Tensor:
    """Sum of edge weights to labeled supports, per class.

    ``edge_rows`` is ``(G, R, NK)`` (edges from R samples to the supports);
    returns ``(G, R, N)``.  Unlabeled supports contribute nothing.
    """
    if edge_rows.shape[-1] != support_y.shape[-1]:
        raise ValueError("edge rows must be restricted to the NK support columns")
    onehot = F.one_hot(support_y, n_way).to(edge_rows.dtype)
    onehot = onehot * labeled.unsqueeze(-1).to(edge_rows.dtype)
    if (onehot.sum(1) == 0).any():
        raise ValueError("every class needs at least one labeled support")
    return torch.matmul(edge_rows, onehot)


def predict(edge_rows, support_y, labeled, n_way: int) -> torch.Tensor:
    """Class probabilities: softmax over the per-class edge votes."""
    return torch.softmax(class_votes(edge_rows, support_y, labeled, n_way), dim=-1)


def point_loss(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of probability vectors against integer labels."""
    n = probs.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n):
        raise ValueError(f"label outside 0..{n - 1}")
    picked = probs.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
    return -torch.log(picked.clamp_min(1e-12)).mean()


def distribution_loss(dist_edge_rows, support_y, labeled, labels, n_way: int) -> torch.Tensor:
    return point_loss(predict(dist_edge_rows, support_y, labeled, n_way), labels)


@dataclass
class LossBundle:
    point: list[torch.Tensor]
    distribution: list[torch.Tensor]
    lambda_p: float
    lambda_d: float
    total: torch.Tensor


def total_loss(point_losses, distribution_losses, lambda_p: float = 1.0,
               lambda_d: float = 0.1) -> LossBundle:
    if len(point_losses) != len(distribution_losses):
        raise ValueError("point and distribution loss histories differ in length")
    if not point_losses:
        raise ValueError("empty loss history")
    total = sum(lambda_p * lp + lambda_d * ld for lp, ld in zip(point_losses, distribution_losses))
    return LossBundle(list(point_losses), list(distribution_losses), lambda_p, lambda_d,
                      torch.as_tensor(total))


def _loss_rows(out: DPGNOutput, loss_on: str) -> slice:
    nk = out.support_y.shape[1]
    if loss_on == "all":
        return slice(None)
    return slice(nk, None)


def episode_losses(out: DPGNOutput, lambda_p: float = 1.0, lambda_d: float = 0.1,
                   loss_on: str = "query") -> LossBundle:
    """Per-generation losses for a forward pass with known labels.

    Cross-entropies are averaged over every loss row of every graph in the
    batch, which equals the mean of per-episode losses for equal-size episodes.
    """
    if out.labels is None:
        raise ValueError("forward pass was run without query labels")
    rows = _loss_rows(out, loss_on)
    nk = out.support_y.shape[1]
    labels = out.labels[:, rows]
    lp, ld = [], []
    for ep, ed in zip(out.history.point_edges, out.history.distribution_edges):
        probs = predict(ep[:, rows, :nk], out.support_y, out.labeled, out.n_way)
        lp.append(point_loss(probs, labels))
        ld.append(distribution_loss(ed[:, rows, :nk], out.support_y, out.labeled, labels, out.n_way))
    return total_loss(lp, ld, lambda_p, lambda_d)


def query_votes(out: DPGNOutput, generation: int = -1, kind: str = "point") -> torch.Tensor:
    """Pre-softmax class votes for the queries, ``(B, Tq, N)``.

    ``generation`` indexes the history list (``-1`` = final generation).
    """
    edges = (out.history.point_edges if kind == "point" else out.history.distribution_edges)[generation]
    nk = out.support_y.shape[1]
    votes = class_votes(edges[:, nk:, :nk], out.support_y, out.labeled, out.n_way)
    return votes.reshape(out.batch, out.n_query, out.n_way)


def query_probabilities(out: DPGNOutput, generation: int = -1) -> torch.Tensor:
    return torch.softmax(query_votes(out, generation), dim=-1)
