"""Pluggable convolutional feature extractors.

A backbone is any module that maps a normalized (B, 3, S, S) batch to a
final convolutional feature map (B, C, h, w) and advertises ``feature_dim``.
The classifier head pools that map; explanation code reads it directly.

``tiny_cnn`` ships for fast, download-free tests: a three-layer CNN whose
weights are fixed by an internal constant seed, standing in for shared
pretrained weights (every build gets bit-identical backbone parameters).
``resnet34`` adapts the torchvision 34-layer residual network with its
pretrained weights and is the reference backbone for real use.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import ConfigurationError

_TINY_WEIGHT_SEED = 0x7A11C0DE


class FeatureBackbone(nn.Module):
    """Base class: subclasses set ``feature_dim`` and return a 4D map."""

    feature_dim: int = 0


class TinyCNNBackbone(FeatureBackbone):
    """Small fixed-weight CNN: three stride-2 convs, ReLU, no normalization.

    Downsamples by 8, so a 128 px input yields a 16x16 map of 64 channels.
    Weights are drawn once from a constant seed; there is nothing to train
    and no batch statistics to update.
    """

    feature_dim = 64

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 16, kernel_size=3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(16, 32, kernel_size=3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(32, 64, kernel_size=3, stride=2, padding=1)
        self.act = nn.ReLU(inplace=True)
        self._init_fixed_weights()

    def _init_fixed_weights(self) -> None:
        gen = torch.Generator().manual_seed(_TINY_WEIGHT_SEED)
        for conv in (self.conv1, self.conv2, self.conv3):
            fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
            bound = (6.0 / fan_in) ** 0.5
            with torch.no_grad():
                conv.weight.uniform_(-bound, bound, generator=gen)
                conv.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.act(self.conv1(x))
        x = self.act(self.conv2(x))
        return self.act(self.conv3(x))


class ResNet34Backbone(FeatureBackbone):
    """The torchvision 34-layer residual network up to its last conv block."""

    feature_dim = 512

    def __init__(self):
        super().__init__()
        try:
            from torchvision.models import ResNet34_Weights, resnet34
        except ImportError as exc:  # pragma: no cover - torchvision is a declared dep
            raise ConfigurationError("torchvision is required for the resnet34 backbone") from exc
        try:
            net = resnet34(weights=ResNet34_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise ConfigurationError(
                f"pretrained resnet34 weights are unavailable: {exc}"
            ) from exc
        self.features = nn.Sequential(
            net.conv1,
            net.bn1,
            net.relu,
            net.maxpool,
            net.layer1,
            net.layer2,
            net.layer3,
            net.layer4,
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.features(x)


_REGISTRY = {
    "tiny_cnn": TinyCNNBackbone,
    "tiny": TinyCNNBackbone,
    "resnet34": ResNet34Backbone,
}


def available_backbones() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def create_backbone(backbone_id: str) -> FeatureBackbone:
    """Instantiate a registered backbone; unknown ids are configuration errors."""
    try:
        factory = _REGISTRY[backbone_id]
    except KeyError:
        raise ConfigurationError(
            f"unknown backbone {backbone_id!r}; available: {', '.join(available_backbones())}"
        ) from None
    return factory()
