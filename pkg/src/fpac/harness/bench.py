"""Separable vs full 2D spatial softmax microbenchmark.

Only the coordinate computation is timed: maps in, expected ``(x, y)`` (and
the scalar feature for the numpy/native kernels) out. Each backend runs both
variants on the same random batch.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from fpac import featpoint, kernels

BACKENDS = ("torch", "native", "numpy")


@dataclass(frozen=True)
class BenchResult:
    backend: str
    batch_shape: tuple
    iters: int
    full2d_ms: float
    full2d_std_ms: float
    separable_ms: float
    separable_std_ms: float
    backward: bool = False

    @property
    def ratio(self) -> float:
        """Speedup of the separable variant: full 2D time over separable time."""
        return self.full2d_ms / self.separable_ms

    def as_dict(self) -> dict:
        return {**asdict(self), "batch_shape": list(self.batch_shape), "ratio": self.ratio}

    def summary(self) -> str:
        shape = "x".join(map(str, self.batch_shape))
        return (f"{self.backend:6s} {shape} iters={self.iters}: full2d {self.full2d_ms:.3f} +- "
                f"{self.full2d_std_ms:.3f} ms, separable {self.separable_ms:.3f} +- {self.separable_std_ms:.3f} ms, "
                f"ratio {self.ratio:.2f}x")


def _torch_variants(beta: float, backward: bool):
    def full2d(x):
        return featpoint._coords_from_prob(featpoint._softmax_2d(x, beta))

    def separable(x):
        return featpoint._coords_separable(x, beta)

    if not backward:
        return full2d, separable

    def with_grad(fn):
        def run(x):
            x = x.detach().requires_grad_(True)
            out = fn(x)
            out.sum().backward()
            return out.detach()

        return run

    return with_grad(full2d), with_grad(separable)


def _variants(backend: str, beta: float, backward: bool):
    if backend == "torch":
        return _torch_variants(beta, backward)
    if backward:
        raise ValueError("backward timing is only available for the torch backend")
    if backend == "native" and not kernels.HAVE_NATIVE:
        raise RuntimeError("the compiled kernels are not built; use backend='numpy' or 'torch'")
    return (lambda x: kernels.softmax2d_points(x, beta, backend=backend),
            lambda x: kernels.separable_points(x, beta, backend=backend))


def _as_input(backend: str, arr: np.ndarray):
    return torch.from_numpy(arr) if backend == "torch" else arr


def _to_numpy(out) -> np.ndarray:
    return out.detach().numpy() if isinstance(out, torch.Tensor) else np.asarray(out)


def correctness_prepass(backend: str, beta: float = 0.5, seed: int = 0, atol: float = 1e-5) -> float:
    """Max coordinate disagreement between the variants on additively separable maps.

    For ``u[j] + v[i]`` maps the 2D softmax factorises, so both variants must
    give the same point. Raises AssertionError beyond ``atol``.
    """
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(4, 8, 1, 35))
    v = rng.normal(size=(4, 8, 35, 1))
    maps = (u + v).astype(np.float32)
    full2d, separable = _variants(backend, beta, backward=False)
    a = _to_numpy(full2d(_as_input(backend, maps)))[..., :2]
    b = _to_numpy(separable(_as_input(backend, maps)))[..., :2]
    err = float(np.abs(a - b).max())
    if not err <= atol:
        raise AssertionError(f"{backend}: separable and full 2D disagree by {err:.3g} on separable maps")
    return err


def _time(fn, x, iters: int, warmup: int) -> list[float]:
    for _ in range(warmup):
        fn(x)
    times = []
    for _ in range(iters):
        t0 = time.perf_counter_ns()
        fn(x)
        times.append((time.perf_counter_ns() - t0) / 1e6)
    return times


def bench_softmax(batch_shape=(128, 32, 35, 35), iters: int = 1000, warmup: int = 100, backend: str = "torch",
                  beta: float = 0.5, backward: bool = False, seed: int = 0) -> BenchResult:
    """Time both variants on one random batch and report mean/std per call in ms."""
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    if iters < 1 or warmup < 0:
        raise ValueError(f"need iters >= 1 and warmup >= 0, got {iters}, {warmup}")
    correctness_prepass(backend, beta)
    maps = np.random.default_rng(seed).normal(size=batch_shape).astype(np.float32)
    x = _as_input(backend, maps)
    full2d, separable = _variants(backend, beta, backward)
    for fn in (full2d, separable):
        if not np.isfinite(_to_numpy(fn(x))).all():
            raise AssertionError(f"{backend}: non-finite benchmark output")
    ctx = torch.enable_grad() if backward else torch.no_grad()
    with ctx:
        t_full = _time(full2d, x, iters, warmup)
        t_sep = _time(separable, x, iters, warmup)

    def stats(ts):
        return statistics.fmean(ts), (statistics.stdev(ts) if len(ts) > 1 else 0.0)

    (fm, fs), (sm, ss) = stats(t_full), stats(t_sep)
    return BenchResult(backend, tuple(batch_shape), iters, fm, fs, sm, ss, backward)


def available_backends() -> list[str]:
    return [b for b in BACKENDS if b != "native" or kernels.HAVE_NATIVE]
