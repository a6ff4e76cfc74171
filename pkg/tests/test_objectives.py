import math

import pytest
import torch

from conftest import random_labels, tiny_model
from dpgn.objectives import (
    class_votes,
    episode_losses,
    point_loss,
    predict,
    query_probabilities,
    query_votes,
    total_loss,
)


def _rows(values):
    return torch.tensor([values], dtype=torch.float64)


def test_two_way_prediction_example():
    p = predict(_rows([[0.9, 0.1]]), torch.tensor([[0, 1]]), torch.tensor([[True, True]]), 2)
    torch.testing.assert_close(p[0, 0], torch.tensor([0.6900, 0.3100], dtype=torch.float64),
                               rtol=0, atol=5e-5)


def test_votes_sum_over_class_shots():
    rows = _rows([[0.4, 0.4, 0.1, 0.1]])
    sy = torch.tensor([[0, 0, 1, 1]])
    lab = torch.ones(1, 4, dtype=torch.bool)
    torch.testing.assert_close(class_votes(rows, sy, lab, 2), _rows([[0.8, 0.2]]))
    torch.testing.assert_close(predict(rows, sy, lab, 2), torch.softmax(_rows([[0.8, 0.2]]), -1))


def test_unlabeled_supports_do_not_vote():
    rows = _rows([[0.4, 0.4, 0.1, 0.1]])
    sy = torch.tensor([[0, 0, 1, 1]])
    lab = torch.tensor([[True, False, True, False]])
    torch.testing.assert_close(class_votes(rows, sy, lab, 2), _rows([[0.4, 0.1]]))
    with pytest.raises(ValueError, match="at least one labeled"):
        class_votes(rows, sy, torch.tensor([[True, True, False, False]]), 2)


def test_cross_entropy_values():
    uniform = torch.full((3, 5), 0.2, dtype=torch.float64)
    assert point_loss(uniform, torch.tensor([0, 3, 4])).item() == pytest.approx(math.log(5), abs=1e-12)
    probs = torch.tensor([[0.7, 0.3], [0.4, 0.6]], dtype=torch.float64)
    assert point_loss(probs, torch.tensor([0, 1])).item() == pytest.approx(
        -(math.log(0.7) + math.log(0.6)) / 2, abs=1e-12)
    with pytest.raises(ValueError, match="label outside"):
        point_loss(probs, torch.tensor([0, 2]))


def test_total_loss_weighting():
    b = total_loss([torch.tensor(2.0)], [torch.tensor(1.0)])
    assert b.total.item() == pytest.approx(2.1)
    b = total_loss([torch.tensor(2.0)], [torch.tensor(1.0)], lambda_d=0.0)
    assert b.total.item() == pytest.approx(2.0)
    b = total_loss([torch.tensor(1.0), torch.tensor(0.5)], [torch.tensor(1.0), torch.tensor(3.0)],
                   lambda_p=2.0, lambda_d=0.5)
    assert b.total.item() == pytest.approx(2.0 + 0.5 + 1.0 + 1.5)
    with pytest.raises(ValueError):
        total_loss([torch.tensor(1.0)], [])
    with pytest.raises(ValueError):
        total_loss([], [])


def test_edge_rows_must_cover_supports_only():
    with pytest.raises(ValueError, match="support columns"):
        class_votes(_rows([[0.5, 0.5, 0.0]]), torch.tensor([[0, 1]]), torch.ones(1, 2, dtype=torch.bool), 2)


def test_shift_invariance():
    rows = torch.rand(1, 3, 4, dtype=torch.float64)
    sy = torch.tensor([[0, 0, 1, 1]])
    lab = torch.ones(1, 4, dtype=torch.bool)
    # adding c to every edge raises every class vote by K*c
    torch.testing.assert_close(predict(rows + 0.3, sy, lab, 2), predict(rows, sy, lab, 2))


def test_losses_and_predictions_follow_query_order(gen):
    model = tiny_model(n_way=3, k_shot=1, emb_dim=4, generations=2)
    sy, lab, qy = random_labels(1, 3, 1, 4, gen)
    x = torch.randn(1, 7, 4, generator=gen, dtype=torch.float64)
    perm = torch.tensor([2, 0, 3, 1])
    x2 = x.clone()
    x2[0, 3:] = x[0, 3:][perm]
    with torch.no_grad():
        out, out2 = model(x, sy, lab, qy), model(x2, sy, lab, qy[:, perm])
        a, b = episode_losses(out), episode_losses(out2)
        torch.testing.assert_close(a.total, b.total)
        torch.testing.assert_close(query_probabilities(out)[0, perm], query_probabilities(out2)[0])


def test_episode_losses_one_entry_per_generation(gen):
    model = tiny_model(n_way=2, k_shot=2, emb_dim=4, generations=3)
    sy, lab, qy = random_labels(3, 2, 2, 3, gen)
    x = torch.randn(3, 7, 4, generator=gen, dtype=torch.float64)
    with torch.no_grad():
        out = model(x, sy, lab, qy)
        b = episode_losses(out, 1.0, 0.1)
    assert len(b.point) == len(b.distribution) == 3
    want = sum(lp + 0.1 * ld for lp, ld in zip(b.point, b.distribution))
    torch.testing.assert_close(b.total, want)
    # final-generation point loss equals CE of the query probabilities
    probs = query_probabilities(out).reshape(-1, 2)
    torch.testing.assert_close(b.point[-1], point_loss(probs, qy.reshape(-1)))
    assert query_votes(out, kind="distribution").shape == (3, 3, 2)
    with pytest.raises(ValueError, match="without query labels"):
        episode_losses(model(x, sy, lab))


def test_non_transductive_loss_matches_per_query_graphs(gen):
    model = tiny_model(n_way=2, k_shot=1, emb_dim=4, generations=2)
    sy, lab, qy = random_labels(1, 2, 1, 3, gen)
    x = torch.randn(1, 5, 4, generator=gen, dtype=torch.float64)
    with torch.no_grad():
        out = model(x, sy, lab, qy, transductive=False)
        single = [query_probabilities(model(torch.cat([x[:, :2], x[:, 2 + q:3 + q]], 1), sy, lab))
                  for q in range(3)]
    torch.testing.assert_close(query_probabilities(out)[0], torch.cat(single, 1)[0])


def test_degenerate_predictions_and_losses():
    sy = torch.tensor([[0, 1, 2]])
    lab = torch.ones(1, 3, dtype=torch.bool)
    p = predict(torch.full((1, 2, 3), 0.2, dtype=torch.float64), sy, lab, 3)
    torch.testing.assert_close(p, torch.full_like(p, 1 / 3))
    onehot = torch.eye(3, dtype=torch.float64)
    assert point_loss(onehot, torch.tensor([0, 1, 2])).item() == 0.0
    # distribution rows concentrated on the right support beat the uniform loss
    from dpgn.objectives import distribution_loss

    sharp = torch.tensor([[[0.9, 0.05, 0.05], [0.05, 0.05, 0.9]]], dtype=torch.float64)
    flat = torch.full_like(sharp, 1 / 3)
    y = torch.tensor([[0, 2]])
    assert distribution_loss(flat, sy, lab, y, 3).item() == pytest.approx(math.log(3))
    assert distribution_loss(sharp, sy, lab, y, 3).item() < math.log(3)
