"""Differentiable feature-point bottleneck.

Feature maps have shape ``(..., K, H, W)``. A feature-point set is a tensor of
shape ``(..., K, 3)`` holding ``(x, y, m)`` per channel, where ``x`` runs along
the image width, ``y`` along the image height (row 0 is ``-1``), and ``m`` is
the tanh of the channel mean.

All functions are pure and work on leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import torch

MODES = ("separable", "full2d")

DeltaLike = Union[torch.Tensor, np.ndarray, Sequence[float], None]


class ContractViolation(ValueError):
    """Raised when an input breaks a documented precondition of a pure op."""


@dataclass(frozen=True)
class ExtractorConfig:
    mode: str = "separable"
    temperature: float = 0.5
    relative: bool = False
    use_scalar_feature: bool = True
    use_velocity: bool = True
    # the scalar feature's difference is part of the velocity block unless disabled
    scalar_velocity: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown extractor mode {self.mode!r}; expected one of {MODES}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def _check_maps(maps, finite: bool = True) -> torch.Tensor:
    maps = _as_tensor(maps)
    if maps.dim() < 3:
        raise ValueError(f"feature maps need shape (..., K, H, W), got {tuple(maps.shape)}")
    if min(maps.shape[-3:]) < 1:
        raise ValueError(f"empty feature maps {tuple(maps.shape)}")
    if finite and not torch.isfinite(maps).all():
        raise ValueError("feature maps contain non-finite values")
    return maps


def _check_beta(beta: float) -> None:
    if not beta > 0:
        raise ValueError(f"temperature must be positive, got {beta}")


def normalized_grid(n: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """``n`` evenly spaced values from -1 to 1 inclusive; ``n == 1`` gives ``[-1]``."""
    if n < 1:
        raise ValueError(f"grid size must be >= 1, got {n}")
    # built in float64 so the float32 grid is exactly symmetric about 0
    return torch.linspace(-1.0, 1.0, n, dtype=torch.float64, device=device).to(dtype)


def _softmax_2d(maps: torch.Tensor, beta: float) -> torch.Tensor:
    # softmax subtracts the max internally, so equal logits give an exact uniform
    return torch.softmax(maps.flatten(-2) / beta, dim=-1).view_as(maps)


def _coords_from_prob(prob: torch.Tensor) -> torch.Tensor:
    h, w = prob.shape[-2:]
    gx = normalized_grid(w, dtype=prob.dtype, device=prob.device)
    gy = normalized_grid(h, dtype=prob.dtype, device=prob.device)
    x = (prob.sum(dim=-2) * gx).sum(dim=-1)
    y = (prob.sum(dim=-1) * gy).sum(dim=-1)
    return torch.stack([x, y], dim=-1)


def spatial_softmax_2d(maps, beta: float = 1.0) -> torch.Tensor:
    """Per-channel softmax over all ``H * W`` positions of ``maps / beta``."""
    _check_beta(beta)
    return _softmax_2d(_check_maps(maps), beta)


def expected_coords_2d(prob, atol: float = 1e-4) -> torch.Tensor:
    """Expected ``(x, y)`` grid coordinates under per-channel distributions."""
    prob = _as_tensor(prob)
    total = prob.sum(dim=(-2, -1))
    if not torch.allclose(total, torch.ones_like(total), atol=atol, rtol=0.0) or (prob < 0).any():
        raise ContractViolation("probability maps must be non-negative and sum to 1 per channel")
    return _coords_from_prob(prob)


def mean_pool_axis(maps, axis: str) -> torch.Tensor:
    """Average out one spatial axis.

    ``axis="rows"`` averages over the rows and returns a profile of length W
    (the x profile); ``axis="cols"`` returns a profile of length H.
    """
    maps = _check_maps(maps)
    if axis == "rows":
        return maps.mean(dim=-2)
    if axis == "cols":
        return maps.mean(dim=-1)
    raise ValueError(f"axis must be 'rows' or 'cols', got {axis!r}")


def _profile_expectation(profile: torch.Tensor, beta: float) -> torch.Tensor:
    grid = normalized_grid(profile.shape[-1], dtype=profile.dtype, device=profile.device)
    prob = torch.softmax(profile / beta, dim=-1)
    return (prob * grid).sum(dim=-1)


def _coords_separable(maps: torch.Tensor, beta: float) -> torch.Tensor:
    x = _profile_expectation(maps.mean(dim=-2), beta)
    y = _profile_expectation(maps.mean(dim=-1), beta)
    return torch.stack([x, y], dim=-1)


def expected_coords_separable(maps, beta: float = 0.5) -> torch.Tensor:
    """Coordinates from 1D softmaxes over the mean-pooled x and y profiles."""
    _check_beta(beta)
    return _coords_separable(_check_maps(maps), beta)


def scalar_features(maps) -> torch.Tensor:
    return torch.tanh(_check_maps(maps).mean(dim=(-2, -1)))


def extract(maps, cfg: ExtractorConfig = ExtractorConfig(), check: bool = True) -> torch.Tensor:
    """Map ``(..., K, H, W)`` feature maps to ``(..., K, 3)`` feature points.

    ``check=False`` skips the finiteness scan of the input; the training loop
    uses it and relies on its loss watchdog instead.
    """
    maps = _check_maps(maps, finite=check)
    if cfg.mode == "separable":
        xy = _coords_separable(maps, cfg.temperature)
    else:
        xy = _coords_from_prob(_softmax_2d(maps, cfg.temperature))
    if cfg.use_scalar_feature:
        m = torch.tanh(maps.mean(dim=(-2, -1)))
    else:
        m = torch.zeros(xy.shape[:-1], dtype=xy.dtype, device=xy.device)
    return torch.cat([xy, m.unsqueeze(-1)], dim=-1)


def to_relative(fps) -> torch.Tensor:
    """Subtract the mean x and y over all K points; m passes through."""
    fps = _as_tensor(fps)
    xy = fps[..., :2]
    xy = xy - xy.mean(dim=-2, keepdim=True)
    return torch.cat([xy, fps[..., 2:]], dim=-1)


def _delta_tensor(delta: DeltaLike, like: torch.Tensor) -> torch.Tensor:
    d = torch.as_tensor(np.asarray(delta, dtype=np.float64) if not isinstance(delta, torch.Tensor) else delta)
    d = d.to(dtype=like.dtype, device=like.device)
    if d.shape[-1] != 2:
        raise ValueError(f"camera delta must have a trailing dimension of 2, got {tuple(d.shape)}")
    if not torch.isfinite(d).all():
        raise ValueError("camera delta contains non-finite values")
    return d


def compensate_camera(fps_prev, delta: DeltaLike) -> torch.Tensor:
    """Shift previous-frame points by ``-delta`` so static world points line up.

    ``delta`` is the camera translation between the two frames in normalized
    grid units; it broadcasts as ``(..., 2)`` against ``(..., K, 3)`` points.
    """
    fps_prev = _as_tensor(fps_prev)
    d = _delta_tensor(delta, fps_prev)
    xy = (fps_prev[..., :2] - d.unsqueeze(-2)).clamp(-1.0, 1.0)
    return torch.cat([xy, fps_prev[..., 2:]], dim=-1)


def build_state(
    fps_t,
    fps_prev,
    delta: DeltaLike = None,
    cfg: ExtractorConfig = ExtractorConfig(),
) -> torch.Tensor:
    """Concatenate positions and per-step differences into a ``6K`` vector.

    Layout: ``[x1, y1, m1, ..., xK, yK, mK, dx1, dy1, dm1, ...]``.
    """
    fps_t = _as_tensor(fps_t)
    fps_prev = _as_tensor(fps_prev).to(fps_t.dtype)
    if fps_t.shape != fps_prev.shape:
        raise ValueError(f"feature point sets differ in shape: {tuple(fps_t.shape)} vs {tuple(fps_prev.shape)}")
    if delta is not None:
        fps_prev = compensate_camera(fps_prev, delta)
    if cfg.relative:
        fps_t = to_relative(fps_t)
        fps_prev = to_relative(fps_prev)
    pos = fps_t.flatten(-2)
    if cfg.use_velocity:
        diff = fps_t - fps_prev
        if not cfg.scalar_velocity:
            diff = torch.cat([diff[..., :2], torch.zeros_like(diff[..., 2:])], dim=-1)
        vel = diff.flatten(-2)
    else:
        vel = torch.zeros_like(pos)
    return torch.cat([pos, vel], dim=-1)

