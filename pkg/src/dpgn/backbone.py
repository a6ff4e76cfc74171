"""Instance embedding networks (the feature extractor feeding the point graph)."""
from __future__ import annotations

import torch
import torch.nn as nn


class EmbeddingNet(nn.Module):
    """Maps a batch of samples to ``m``-dim embeddings.

    ``arch="mlp"`` takes flat vectors through ``depth`` Linear-BN-ReLU layers,
    ``arch="conv4"`` takes ``C x H x W`` images.  Both end in a fully-connected
    layer followed by batch norm.
    """

    def __init__(self, arch: str, input_shape, emb_dim: int = 32,
                 hidden: int = 64, dropout: float = 0.1, depth: int = 2):
        super().__init__()
        self.arch = arch
        self.input_shape = tuple(int(s) for s in input_shape)
        self.emb_dim = emb_dim
        if arch == "mlp":
            if len(self.input_shape) != 1:
                raise ValueError(f"mlp expects vector input, got shape {self.input_shape}")
            layers = []
            width = self.input_shape[0]
            for _ in range(depth):
                layers += [nn.Linear(width, hidden), nn.BatchNorm1d(hidden), nn.ReLU()]
                width = hidden
            self.features = nn.Sequential(*layers)
            hidden = width
        elif arch == "conv4":
            if len(self.input_shape) != 3:
                raise ValueError(f"conv4 expects CxHxW input, got shape {self.input_shape}")
            blocks = []
            channels = self.input_shape[0]
            for b in range(4):
                blocks += [
                    nn.Conv2d(channels, hidden, 3, padding=1, bias=False),
                    nn.BatchNorm2d(hidden),
                    nn.ReLU(),
                    nn.MaxPool2d(2, ceil_mode=True),
                ]
                # last two blocks carry dropout
                if b >= 2:
                    blocks.append(nn.Dropout(dropout))
                channels = hidden
            blocks += [nn.AdaptiveAvgPool2d(1), nn.Flatten()]
            self.features = nn.Sequential(*blocks)
        else:
            raise ValueError(f"unknown backbone architecture {arch!r}")
        self.fc = nn.Linear(hidden, emb_dim)
        self.bn = nn.BatchNorm1d(emb_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.bn(self.fc(self.features(x)))


def embed(net: EmbeddingNet, batch: torch.Tensor) -> torch.Tensor:
    """``(T, *input_shape) -> (T, m)``; leading batch dims are flattened and restored."""
    lead = batch.shape[: batch.dim() - len(net.input_shape)]
    if tuple(batch.shape[len(lead):]) != net.input_shape:
        raise ValueError(
            f"shape mismatch: {net.arch} expects samples of shape {net.input_shape}, "
            f"got {tuple(batch.shape)}"
        )
    flat = batch.reshape(-1, *net.input_shape)
    return net(flat).reshape(*lead, net.emb_dim)
