"""2D camera model and a small anti-aliased software rasterizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

Color = tuple  # (r, g, b) in [0, 1]


@dataclass(frozen=True)
class Camera2D:
    """Axis-aligned camera. ``scale`` is the world width between the centres of
    the first and last pixel columns, i.e. the span of normalized x in [-1, 1]."""

    center: tuple = (0.0, 0.0)
    scale: float = 2.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"camera scale must be positive, got {self.scale}")

    def half_extent(self, height: int, width: int) -> tuple[float, float]:
        half_w = self.scale / 2.0
        half_h = half_w * (height - 1) / (width - 1) if width > 1 else half_w
        return half_w, half_h

    def shifted(self, dx: float = 0.0, dy: float = 0.0) -> "Camera2D":
        return Camera2D((self.center[0] + dx, self.center[1] + dy), self.scale)


def project(points, camera: Camera2D, height: int, width: int) -> np.ndarray:
    """World ``(..., 2)`` points to normalized image coordinates (unclamped).

    x grows to the right, y grows downwards (row 0 is ``y = -1``).
    """
    p = np.asarray(points, dtype=np.float64)
    half_w, half_h = camera.half_extent(height, width)
    x = (p[..., 0] - camera.center[0]) / half_w
    y = -(p[..., 1] - camera.center[1]) / half_h
    return np.stack([x, y], axis=-1)


def unproject(coords, camera: Camera2D, height: int, width: int) -> np.ndarray:
    c = np.asarray(coords, dtype=np.float64)
    half_w, half_h = camera.half_extent(height, width)
    wx = camera.center[0] + c[..., 0] * half_w
    wy = camera.center[1] - c[..., 1] * half_h
    return np.stack([wx, wy], axis=-1)


def coords_to_pixels(coords, height: int, width: int) -> np.ndarray:
    """Normalized grid coordinates to fractional ``(col, row)`` pixel indices."""
    c = np.asarray(coords, dtype=np.float64)
    col = (c[..., 0] + 1.0) * (width - 1) / 2.0
    row = (c[..., 1] + 1.0) * (height - 1) / 2.0
    return np.stack([col, row], axis=-1)


@dataclass(frozen=True)
class Disk:
    center: tuple
    radius: float
    color: Color


@dataclass(frozen=True)
class Rect:
    center: tuple
    half_size: tuple
    color: Color


@dataclass(frozen=True)
class Rod:
    start: tuple
    end: tuple
    width: float
    color: Color


@dataclass(frozen=True)
class Stripes:
    """Vertical bands of period ``period`` below ``top`` (world-anchored floor texture)."""

    top: float
    period: float
    color: Color
    alt_color: Color


@dataclass
class Scene:
    background: Color = (0.0, 0.0, 0.0)
    items: list = field(default_factory=list)


def _luminance(color: Sequence[float]) -> float:
    r, g, b = color
    return 0.299 * r + 0.587 * g + 0.114 * b


def _coverage(signed_dist: np.ndarray, pixel: float) -> np.ndarray:
    # one-pixel linear ramp across the boundary
    return np.clip(0.5 - signed_dist / pixel, 0.0, 1.0)


def render_scene(scene: Scene, camera: Camera2D, frame_shape: tuple) -> np.ndarray:
    """Rasterize ``scene`` into a float32 ``(C, H, W)`` frame with values in [0, 1]."""
    channels, height, width = frame_shape
    if channels not in (1, 3):
        raise ValueError(f"frames must have 1 or 3 channels, got {channels}")
    half_w, half_h = camera.half_extent(height, width)
    u = np.linspace(-1.0, 1.0, width) if width > 1 else np.zeros(1)
    v = np.linspace(-1.0, 1.0, height) if height > 1 else np.zeros(1)
    wx = camera.center[0] + u * half_w
    wy = camera.center[1] - v * half_h
    X, Y = np.meshgrid(wx, wy)
    pixel = camera.scale / max(width - 1, 1)

    def tone(color):
        return np.array([_luminance(color)]) if channels == 1 else np.asarray(color, dtype=np.float64)

    img = np.empty((channels, height, width))
    img[:] = tone(scene.background)[:, None, None]
    for item in scene.items:
        if isinstance(item, Stripes):
            band = np.floor(X / item.period).astype(np.int64) % 2 == 0
            below = _coverage(Y - item.top, pixel)
            c0, c1 = tone(item.color), tone(item.alt_color)
            col = np.where(band[None], c0[:, None, None], c1[:, None, None])
            img = img * (1 - below) + col * below
            continue
        if isinstance(item, Disk):
            d = np.hypot(X - item.center[0], Y - item.center[1]) - item.radius
        elif isinstance(item, Rect):
            qx = np.abs(X - item.center[0]) - item.half_size[0]
            qy = np.abs(Y - item.center[1]) - item.half_size[1]
            outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0))
            d = outside + np.minimum(np.maximum(qx, qy), 0)
        elif isinstance(item, Rod):
            a = np.asarray(item.start, dtype=np.float64)
            b = np.asarray(item.end, dtype=np.float64)
            ab = b - a
            denom = float(ab @ ab) or 1.0
            t = np.clip(((X - a[0]) * ab[0] + (Y - a[1]) * ab[1]) / denom, 0.0, 1.0)
            d = np.hypot(X - (a[0] + t * ab[0]), Y - (a[1] + t * ab[1])) - item.width / 2
        else:
            raise TypeError(f"unknown scene item {item!r}")
        alpha = _coverage(d, pixel)[None]
        img = img * (1 - alpha) + tone(item.color)[:, None, None] * alpha
    return np.clip(img, 0.0, 1.0).astype(np.float32)
