"""Small analytic classifiers whose gradients and maps are known in closed form."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .backend import TorchClassifier


class _Linear(nn.Module):
    def __init__(self, weights: np.ndarray, bias: np.ndarray | None = None):
        super().__init__()
        w = torch.as_tensor(np.asarray(weights, dtype=np.float64))
        self.features = nn.Identity()
        self.weight = nn.Parameter(w.reshape(w.shape[0], -1))
        b = np.zeros(w.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
        self.bias = nn.Parameter(torch.as_tensor(b))

    def forward(self, x):
        x = self.features(x)
        return x.flatten(1) @ self.weight.T + self.bias


def linear_stub(weights, bias=None) -> TorchClassifier:
    """logit_c(x) = sum(weights[c] * x) + bias[c]; weights shaped K x C x H x W."""
    w = np.asarray(weights, dtype=np.float64)
    module = _Linear(w, bias)
    return TorchClassifier(module, w.shape[1:], w.shape[0], {"input": module.features})


def sigmoid_score_stub(weights) -> TorchClassifier:
    """Two-class model with p(class 0) = sigmoid(sum(w * x)).

    ``weights`` is C x H x W; logits are (w.x, 0).
    """
    w = np.asarray(weights, dtype=np.float64)
    return linear_stub(np.stack([w, np.zeros_like(w)]))


class _GapLinear(nn.Module):
    def __init__(self, feature: nn.Module, head: np.ndarray):
        super().__init__()
        self.features = feature
        h = np.asarray(head, dtype=np.float64)
        self.head = nn.Linear(h.shape[1], h.shape[0], dtype=torch.float64)
        with torch.no_grad():
            self.head.weight.copy_(torch.as_tensor(h))
            self.head.bias.zero_()

    def forward(self, x):
        return self.head(self.features(x).mean(dim=(2, 3)))


def gap_linear_stub(head, channels: int | None = None, height: int = 8, width: int = 8,
                    feature: nn.Module | None = None) -> TorchClassifier:
    """Feature layer -> global average pool -> linear head (num_classes x K).

    With the default identity feature layer the activations are the input
    itself, so the layer is named ``features`` and has K = input channels.
    """
    head = np.asarray(head, dtype=np.float64)
    k = head.shape[1] if channels is None else channels
    module = _GapLinear(feature if feature is not None else nn.Identity(), head)
    return TorchClassifier(module, (k, height, width), head.shape[0], {"features": module.features})


def identity_conv_stub(channels: int = 1, height: int = 8, width: int = 8,
                       num_classes: int = 2) -> TorchClassifier:
    """1x1 convolution with unit weight followed by GAP + zero-init linear head."""
    conv = nn.Conv2d(channels, channels, 1, bias=False, dtype=torch.float64)
    with torch.no_grad():
        conv.weight.copy_(torch.eye(channels, dtype=torch.float64)[:, :, None, None])
    head = np.ones((num_classes, channels))
    module = _GapLinear(conv, head)
    return TorchClassifier(module, (channels, height, width), num_classes, {"conv": conv})


class _Constant(nn.Module):
    def __init__(self, logits: np.ndarray):
        super().__init__()
        self.features = nn.Identity()
        self.register_buffer("const", torch.as_tensor(np.asarray(logits, dtype=np.float64)))

    def forward(self, x):
        # 0 * x keeps the output attached to the input graph, gradients are exactly zero
        a = self.features(x)
        return self.const.expand(x.shape[0], -1) + 0.0 * a.sum(dim=(1, 2, 3))[:, None]


def constant_stub(num_classes: int = 4, input_shape=(3, 8, 8), logits=None) -> TorchClassifier:
    """Model whose output ignores the input. Default logits give a uniform vector."""
    z = np.zeros(num_classes) if logits is None else np.asarray(logits, dtype=np.float64)
    module = _Constant(z)
    return TorchClassifier(module, input_shape, len(z), {"features": module.features})
