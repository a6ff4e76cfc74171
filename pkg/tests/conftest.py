import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from dpgn.config import DPGNConfig  # noqa: E402
from dpgn.graph import DPGN  # noqa: E402


def randomize_bn(module: torch.nn.Module, gen: torch.Generator) -> None:
    """Give every batch-norm layer non-trivial running statistics and affine params."""
    for m in module.modules():
        if isinstance(m, torch.nn.modules.batchnorm._BatchNorm):
            n = m.num_features
            m.running_mean.copy_(torch.randn(n, generator=gen, dtype=m.running_mean.dtype) * 0.3)
            m.running_var.copy_(torch.rand(n, generator=gen, dtype=m.running_var.dtype) + 0.5)
            m.weight.data.copy_(torch.rand(n, generator=gen, dtype=m.weight.dtype) + 0.5)
            m.bias.data.copy_(torch.randn(n, generator=gen, dtype=m.bias.dtype) * 0.3)


def tiny_model(n_way=2, k_shot=1, emb_dim=3, generations=1, input_dim=4, seed=0,
               tying="exchangeable", randomize_p2d=True, **kw) -> DPGN:
    torch.manual_seed(seed)
    cfg = DPGNConfig(n_way=n_way, k_shot=k_shot, emb_dim=emb_dim, generations=generations,
                     input_shape=(input_dim,), hidden=8, support_tying=tying, **kw)
    model = DPGN(cfg).double()
    gen = torch.Generator().manual_seed(seed + 1)
    randomize_bn(model, gen)
    if randomize_p2d:
        for l in range(1, generations + 1):
            p = model.graph[l].p2d
            with torch.no_grad():
                if p.tying == "exchangeable":
                    p.coef.copy_(torch.randn(2, 3, generator=gen, dtype=p.coef.dtype) * 0.5 + 0.3)
                    p.bias.fill_(0.1)
    model.eval()
    return model


def random_labels(batch, n_way, k_shot, n_query, gen, ratio_mask=None):
    support_y = torch.arange(n_way).repeat_interleave(k_shot).expand(batch, -1).clone()
    query_y = torch.randint(0, n_way, (batch, n_query), generator=gen)
    labeled = torch.ones(batch, n_way * k_shot, dtype=torch.bool)
    if ratio_mask is not None:
        labeled = ratio_mask.expand(batch, -1).clone()
    return support_y, labeled, query_y


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)


# acceptance criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if passed else 'FAIL'}  {detail}")
