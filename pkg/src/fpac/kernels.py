"""Forward-only feature-point kernels on numpy arrays.

The compiled extension is used when it was built; otherwise the numpy
implementations below are used. Set ``FPAC_NO_NATIVE=1`` to force the
fallback. Both take float32 maps of shape ``(B, K, H, W)`` and return
``(B, K, 3)`` float32 ``(x, y, m)`` triplets.
"""

from __future__ import annotations

import os

import numpy as np


def _grid(n: int) -> np.ndarray:
    if n == 1:
        return np.array([-1.0])
    return np.linspace(-1.0, 1.0, n)


def _softmax_expect(profile: np.ndarray, scale: float) -> np.ndarray:
    z = (profile - profile.max(axis=-1, keepdims=True)) * scale
    e = np.exp(z)
    return (e * _grid(profile.shape[-1])).sum(axis=-1) / e.sum(axis=-1)


def separable_points_numpy(maps: np.ndarray, beta: float) -> np.ndarray:
    maps = np.ascontiguousarray(maps, dtype=np.float32)
    out = np.empty(maps.shape[:2] + (3,), dtype=np.float32)
    out[..., 0] = _softmax_expect(maps.mean(axis=-2, dtype=np.float64), 1.0 / beta)
    out[..., 1] = _softmax_expect(maps.mean(axis=-1, dtype=np.float64), 1.0 / beta)
    out[..., 2] = np.tanh(maps.mean(axis=(-2, -1), dtype=np.float64))
    return out


def softmax2d_probs(maps: np.ndarray, beta: float) -> np.ndarray:
    maps = np.asarray(maps, dtype=np.float64)
    flat = maps.reshape(maps.shape[:-2] + (-1,)) / beta
    e = np.exp(flat - flat.max(axis=-1, keepdims=True))
    return (e / e.sum(axis=-1, keepdims=True)).reshape(maps.shape)


def softmax2d_points_numpy(maps: np.ndarray, beta: float) -> np.ndarray:
    maps = np.ascontiguousarray(maps, dtype=np.float32)
    h, w = maps.shape[-2:]
    p = softmax2d_probs(maps, beta)
    out = np.empty(maps.shape[:2] + (3,), dtype=np.float32)
    out[..., 0] = (p.sum(axis=-2) * _grid(w)).sum(axis=-1)
    out[..., 1] = (p.sum(axis=-1) * _grid(h)).sum(axis=-1)
    out[..., 2] = np.tanh(maps.mean(axis=(-2, -1), dtype=np.float64))
    return out


def _load_native():
    if os.environ.get("FPAC_NO_NATIVE"):
        return None
    try:
        from fpac._native import points
    except ImportError:
        return None
    return points


_native = _load_native()

HAVE_NATIVE = _native is not None
BACKEND = "native" if HAVE_NATIVE else "numpy"


def _prepare(maps, beta: float) -> np.ndarray:
    if not beta > 0:
        raise ValueError(f"temperature must be positive, got {beta}")
    maps = np.ascontiguousarray(maps, dtype=np.float32)
    if maps.ndim != 4:
        raise ValueError(f"expected maps of shape (B, K, H, W), got {maps.shape}")
    return maps


def separable_points(maps, beta: float = 0.5, backend: str | None = None) -> np.ndarray:
    maps = _prepare(maps, beta)
    if (backend or BACKEND) == "native":
        if _native is None:
            raise RuntimeError("native kernels are not available")
        return _native.separable_points(maps, float(beta))
    return separable_points_numpy(maps, beta)


def softmax2d_points(maps, beta: float = 0.5, backend: str | None = None) -> np.ndarray:
    maps = _prepare(maps, beta)
    if (backend or BACKEND) == "native":
        if _native is None:
            raise RuntimeError("native kernels are not available")
        return _native.softmax2d_points(maps, float(beta))
    return softmax2d_points_numpy(maps, beta)
