"""Image encoders, looked up by name.

An encoder maps ``(B, C, H, W)`` float images in [0, 1] to ``(B, width)``
feature vectors.
"""

from __future__ import annotations

from typing import Callable

import torch
from torch import nn

EncoderFactory = Callable[[int, int, tuple[int, int]], nn.Module]
_REGISTRY: dict[str, EncoderFactory] = {}


def register_encoder(name: str):
    def wrap(factory: EncoderFactory) -> EncoderFactory:
        if name in _REGISTRY:
            raise ValueError(f"encoder {name!r} already registered")
        _REGISTRY[name] = factory
        return factory

    return wrap


def build_encoder(name: str, in_channels: int, width: int, image_shape: tuple[int, int]) -> nn.Module:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown encoder {name!r}; known: {sorted(_REGISTRY)}") from None
    return factory(in_channels, width, tuple(image_shape))


def encoder_names() -> list[str]:
    return sorted(_REGISTRY)


class SmallConv(nn.Module):
    """Four 3x3 conv layers (three strided), 4x4 adaptive pooling, one linear layer."""

    def __init__(self, in_channels: int, width: int, image_shape: tuple[int, int], channels: int = 32):
        super().__init__()
        c = channels
        self.features = nn.Sequential(
            nn.Conv2d(in_channels, c, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(c, c, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(c, 2 * c, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(2 * c, 2 * c, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d(4),
            nn.Flatten(),
        )
        self.project = nn.Sequential(nn.Linear(2 * c * 16, width), nn.ReLU())

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.project(self.features(x))


class ConvBN(nn.Module):
    """Conv-BatchNorm-ReLU stack: one full-resolution block then three strided ones."""

    def __init__(self, in_channels: int, width: int, image_shape: tuple[int, int], channels: int = 48):
        super().__init__()
        c = channels

        def block(i, o, stride):
            return [nn.Conv2d(i, o, 3, stride=stride, padding=1, bias=False), nn.BatchNorm2d(o), nn.ReLU()]

        self.features = nn.Sequential(
            *block(in_channels, c, 1),
            *block(c, c, 2),
            *block(c, 2 * c, 2),
            *block(2 * c, 2 * c, 2),
            nn.AdaptiveAvgPool2d(4),
            nn.Flatten(),
        )
        self.project = nn.Sequential(nn.Linear(2 * c * 16, width), nn.ReLU())

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.project(self.features(x))


@register_encoder("small_conv")
def _small_conv(in_channels: int, width: int, image_shape: tuple[int, int]) -> nn.Module:
    return SmallConv(in_channels, width, image_shape)


@register_encoder("conv_bn")
def _conv_bn(in_channels: int, width: int, image_shape: tuple[int, int]) -> nn.Module:
    return ConvBN(in_channels, width, image_shape)


@register_encoder("linear")
def _linear(in_channels: int, width: int, image_shape: tuple[int, int]) -> nn.Module:
    h, w = image_shape
    return nn.Sequential(nn.Flatten(), nn.Linear(in_channels * h * w, width), nn.ReLU())
