"""Central-difference gradient checking in float64."""

from __future__ import annotations

from typing import Callable

import torch


def numerical_jacobian(fn: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor, eps: float = 1e-4) -> torch.Tensor:
    """``(out.numel(), x.numel())`` Jacobian by central differences."""
    x = x.detach().clone().double()
    flat = x.view(-1)
    cols = []
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = fn(x).reshape(-1).clone()
            flat[i] = orig - eps
            down = fn(x).reshape(-1).clone()
            flat[i] = orig
            cols.append((up - down) / (2 * eps))
    return torch.stack(cols, dim=1)


def analytic_jacobian(fn: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor) -> torch.Tensor:
    x = x.detach().clone().double()
    jac = torch.autograd.functional.jacobian(fn, x)
    out_numel = jac.numel() // x.numel()
    return jac.reshape(out_numel, x.numel())


def max_relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-6) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all entries.

    The floor keeps entries that are zero up to rounding from dominating.
    """
    scale = torch.maximum(analytic.abs(), numeric.abs()).clamp_min(floor)
    return float(((analytic - numeric).abs() / scale).max())


def check(fn, x: torch.Tensor, eps: float = 1e-4, floor: float = 1e-6) -> float:
    return max_relative_error(analytic_jacobian(fn, x), numerical_jacobian(fn, x, eps), floor)


def check_parameters(loss_fn: Callable[[], torch.Tensor], params: list[torch.Tensor], eps: float = 1e-4,
                     floor: float = 1e-6) -> float:
    """Gradient check of a scalar loss with respect to module parameters (float64)."""
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in params])
    numeric = []
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                numeric.append((up - down) / (2 * eps))
    return max_relative_error(analytic, torch.tensor(numeric, dtype=analytic.dtype), floor)
