"""Independent reference implementations used by the acceptance tests.

Nothing here imports the package: the pendulum dynamics and the feature-point
math are rewritten from their definitions so the checks do not share code with
what they check.
"""

from __future__ import annotations

import math

import numpy as np

# pendulum_swingup constants, restated
G, MAX_TORQUE, DAMPING, MAX_SPEED, SPEED_PENALTY = 10.0, 4.0, 0.1, 12.0, 0.1
DT, REPEAT, STEPS = 0.02, 4, 250


def column_example(beta: float) -> float:
    """Hand enumeration of the 3x3 map whose right column holds log 2."""
    w = np.array([1.0, 1.0, 2.0 ** (1.0 / beta)])  # exp(m / beta) per column, same for every row
    p = w / w.sum()
    return float(p @ np.array([-1.0, 0.0, 1.0]))


def expected_coords(maps: np.ndarray, beta: float) -> np.ndarray:
    """Brute-force 2D softmax expectation in float64: ``(..., K, 2)`` as (x, y)."""
    h, w = maps.shape[-2:]
    z = maps / beta
    z = z - z.max(axis=(-2, -1), keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=(-2, -1), keepdims=True)
    xs, ys = np.linspace(-1, 1, w), np.linspace(-1, 1, h)
    return np.stack([(p * xs).sum(axis=(-2, -1)), (p * ys[:, None]).sum(axis=(-2, -1))], axis=-1)


def swing_controller(theta: np.ndarray, omega: np.ndarray, band: float = 1.0, kp: float = 15.0, kd: float = 10.0,
                     energy_gain: float = 1.05) -> np.ndarray:
    """Energy pumping far from upright, PD with gravity compensation near it."""
    near = np.cos(theta) > math.cos(band)
    pd = np.clip(-(kp * theta + kd * omega + G * np.sin(theta)) / MAX_TORQUE, -1, 1)
    energy = 0.5 * omega**2 + G * np.cos(theta)
    pump = np.where(omega != 0, np.sign(omega), 1.0) * np.where(energy < energy_gain * G, 1.0, -1.0)
    return np.where(near, pd, pump)


def pendulum_rollout(theta0: float, plans: np.ndarray) -> np.ndarray:
    """Returns of a batch of open-loop prefixes, each continued by :func:`swing_controller`."""
    n, horizon = plans.shape
    th, w, ret = np.full(n, float(theta0)), np.zeros(n), np.zeros(n)
    for t in range(STEPS):
        a = np.clip(plans[:, t], -1, 1) if t < horizon else swing_controller(th, w)
        for _ in range(REPEAT):
            w = np.clip(w + DT * (G * np.sin(th) - DAMPING * w + MAX_TORQUE * a), -MAX_SPEED, MAX_SPEED)
            th = (th + DT * w + math.pi) % (2 * math.pi) - math.pi
            ret += (np.cos(th) + 1) / 2 / (1 + SPEED_PENALTY * w * w)
    return ret


def pendulum_best_return(theta0: float, horizon: int = 60, iters: int = 150, pop: int = 300, elite: int = 30,
                         seed: int = 0) -> float:
    """Cross-entropy search over the swing-up prefix, warm-started from the controller."""
    th, w = np.array([theta0]), np.array([0.0])
    seq = []
    for _ in range(horizon):
        a = float(swing_controller(th, w)[0])
        seq.append(a)
        for _ in range(REPEAT):
            w = np.clip(w + DT * (G * np.sin(th) - DAMPING * w + MAX_TORQUE * a), -MAX_SPEED, MAX_SPEED)
            th = (th + DT * w + math.pi) % (2 * math.pi) - math.pi
    mu, sd = np.array(seq), np.full(horizon, 0.2)
    best_plan = mu.copy()
    best = float(pendulum_rollout(theta0, best_plan[None])[0])
    rng = np.random.default_rng(seed)
    for _ in range(iters):
        plans = np.clip(mu + sd * rng.normal(size=(pop, horizon)), -1, 1)
        plans[0] = best_plan
        ret = pendulum_rollout(theta0, plans)
        top = np.argsort(ret)[-elite:]
        if ret[top[-1]] > best:
            best, best_plan = float(ret[top[-1]]), plans[top[-1]].copy()
        mu, sd = plans[top].mean(0), plans[top].std(0) + 0.01
    return best


def pooled_std(a, b) -> float:
    """Pooled sample standard deviation of two groups."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    na, nb = len(a), len(b)
    return math.sqrt(((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2))
