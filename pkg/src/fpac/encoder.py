"""Convolutional encoder: four 3x3 swish conv layers and an optional 1x1 projection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


class ConfigError(ValueError):
    pass


def swish(x):
    """``x * sigmoid(x)``; tensors use the fused SiLU kernel."""
    return F.silu(x) if isinstance(x, torch.Tensor) else x / (1.0 + math.exp(-x))


class Swish(nn.Module):
    def forward(self, x):
        return swish(x)


@dataclass(frozen=True)
class EncoderConfig:
    input_size: tuple = (3, 84, 84)
    conv_layers: int = 4
    channels_per_layer: int = 32
    kernel: int = 3
    strides: tuple = (2, 1, 1, 1)
    # None keeps the trunk output (pixel SAC); an int adds the 1x1 projection to K maps
    projection_channels: int | None = 32

    def __post_init__(self):
        if len(self.strides) != self.conv_layers:
            raise ConfigError(f"need one stride per layer: {self.conv_layers} layers, {len(self.strides)} strides")
        if self.projection_channels is not None and self.projection_channels < 1:
            raise ConfigError(f"projection_channels must be >= 1, got {self.projection_channels}")
        if self.channels_per_layer < 1 or self.kernel < 1:
            raise ConfigError("channels_per_layer and kernel must be positive")


def output_shape(cfg: EncoderConfig) -> tuple[int, int, int]:
    """Shape ``(channels, H, W)`` after valid convolutions."""
    _, h, w = cfg.input_size
    for i, s in enumerate(cfg.strides):
        h = (h - cfg.kernel) // s + 1
        w = (w - cfg.kernel) // s + 1
        if h < 1 or w < 1:
            raise ConfigError(f"input {cfg.input_size} is too small: layer {i + 1} output would be {h}x{w}")
    c = cfg.projection_channels if cfg.projection_channels is not None else cfg.channels_per_layer
    return c, h, w


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.out_shape = output_shape(cfg)
        layers = []
        c_in = cfg.input_size[0]
        for s in cfg.strides:
            layers += [nn.Conv2d(c_in, cfg.channels_per_layer, cfg.kernel, stride=s), Swish()]
            c_in = cfg.channels_per_layer
        if cfg.projection_channels is not None:
            # no activation: the softmax and tanh downstream are the nonlinearity
            layers.append(nn.Conv2d(c_in, cfg.projection_channels, 1))
        self.net = nn.Sequential(*layers)
        init_uniform_(self, seed)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        if tuple(frames.shape[-3:]) != tuple(self.cfg.input_size):
            raise ValueError(f"expected frames of shape (..., {self.cfg.input_size}), got {tuple(frames.shape)}")
        lead = frames.shape[:-3]
        out = self.net(frames.reshape(-1, *frames.shape[-3:]))
        return out.reshape(*lead, *out.shape[1:])


def init_uniform_(module: nn.Module, seed: int) -> nn.Module:
    """Fan-in scaled uniform init of every conv/linear layer from a fixed seed."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                m.weight.copy_(torch.empty_like(m.weight).uniform_(-bound, bound, generator=gen))
                if m.bias is not None:
                    m.bias.copy_(torch.empty_like(m.bias).uniform_(-bound, bound, generator=gen))
    return module


def encode(frame: torch.Tensor, encoder: Encoder) -> torch.Tensor:
    """Feature maps for one ``(C, H, W)`` frame or a batch of frames."""
    return encoder(frame)
