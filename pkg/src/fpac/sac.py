"""Soft Actor-Critic core: replay buffer, networks, losses and the update schedule."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from fpac.encoder import Swish, init_uniform_

LOG_STD_MIN, LOG_STD_MAX = -10.0, 2.0


class InvalidStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class SACConfig:
    discount: float = 0.99
    batch_size: int = 128
    learning_rate: float = 3e-4
    initial_temperature: float = 0.1
    target_update_rate: float = 0.01
    target_update_frequency: int = 2
    actor_update_frequency: int = 2
    initial_random_steps: int = 1000
    target_entropy: Optional[float] = None  # None means -action_dim
    hidden_units: int = 1024
    hidden_layers: int = 2
    replay_capacity: int = 100000
    twin_critics: bool = True

    def __post_init__(self):
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError(f"discount must lie in [0, 1], got {self.discount}")
        if not 0.0 < self.target_update_rate <= 1.0:
            raise ValueError(f"target_update_rate must lie in (0, 1], got {self.target_update_rate}")
        for name in ("target_update_frequency", "actor_update_frequency", "batch_size", "replay_capacity",
                     "hidden_units", "hidden_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.initial_random_steps < 0:
            raise ValueError("initial_random_steps must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not self.initial_temperature > 0:
            raise ValueError(f"initial_temperature must be positive, got {self.initial_temperature}")


# --- replay buffer ---------------------------------------------------------


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool
    camera_delta: Optional[np.ndarray] = None
    next_camera_delta: Optional[np.ndarray] = None


class ReplayBuffer:
    """FIFO ring buffer with uniform sampling (with replacement).

    Storage is allocated on the first push from the shapes and dtypes of that
    transition; image observations should be pushed as uint8.
    """

    def __init__(self, capacity: int = 100000, seed: int = 0):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.rng = np.random.default_rng(seed)
        self._data: dict[str, np.ndarray] = {}
        self._pos = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def _fields(self, t: Transition) -> dict:
        out = {
            "obs": np.asarray(t.obs),
            "action": np.asarray(t.action, dtype=np.float32),
            "reward": np.float32(t.reward),
            "next_obs": np.asarray(t.next_obs),
            "done": np.float32(bool(t.done)),
        }
        if t.camera_delta is not None:
            out["camera_delta"] = np.asarray(t.camera_delta, dtype=np.float32)
            out["next_camera_delta"] = np.asarray(
                t.next_camera_delta if t.next_camera_delta is not None else np.zeros(2), dtype=np.float32
            )
        return out

    def push(self, t: Transition) -> None:
        fields = self._fields(t)
        if not self._data:
            for k, v in fields.items():
                self._data[k] = np.zeros((self.capacity,) + np.shape(v), dtype=np.asarray(v).dtype)
        elif fields.keys() != self._data.keys():
            raise ValueError(f"transition fields {sorted(fields)} do not match buffer fields {sorted(self._data)}")
        for k, v in fields.items():
            self._data[k][self._pos] = v
        self._pos = (self._pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def indices_oldest_first(self) -> np.ndarray:
        start = self._pos if self.size == self.capacity else 0
        return (start + np.arange(self.size)) % self.capacity

    def get(self, idx) -> dict:
        return {k: v[idx] for k, v in self._data.items()}

    def sample_indices(self, n: int) -> np.ndarray:
        if self.size == 0:
            raise InvalidStateError("cannot sample from an empty replay buffer")
        return self.rng.integers(0, self.size, size=n)

    def sample(self, n: int) -> dict:
        return self.get(self.sample_indices(n))


# --- networks --------------------------------------------------------------


def mlp(in_dim: int, out_dim: int, hidden: int, layers: int) -> nn.Sequential:
    mods, d = [], in_dim
    for _ in range(layers):
        mods += [nn.Linear(d, hidden), Swish()]
        d = hidden
    mods.append(nn.Linear(d, out_dim))
    return nn.Sequential(*mods)


def squashed_log_prob(pre_tanh: torch.Tensor, mean: torch.Tensor, log_std: torch.Tensor) -> torch.Tensor:
    """Log density of ``tanh(u)`` for ``u ~ N(mean, exp(log_std))``, summed over the last dim."""
    z = (pre_tanh - mean) / log_std.exp()
    normal = -0.5 * z.pow(2) - log_std - 0.5 * math.log(2 * math.pi)
    # log(1 - tanh(u)^2) written stably
    jac = 2.0 * (math.log(2.0) - pre_tanh - F.softplus(-2.0 * pre_tanh))
    return (normal - jac).sum(-1)


class Actor(nn.Module):
    def __init__(self, in_dim: int, action_dim: int, hidden: int, layers: int):
        super().__init__()
        self.net = mlp(in_dim, 2 * action_dim, hidden, layers)

    def forward(self, features: torch.Tensor):
        mean, log_std = self.net(features).chunk(2, dim=-1)
        return mean, log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)

    def sample(self, features: torch.Tensor, generator: Optional[torch.Generator] = None):
        """Reparameterized squashed sample; returns ``(action, log_prob)``."""
        mean, log_std = self(features)
        eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        u = mean + log_std.exp() * eps
        # tanh rounds to +-1 in float32 for |u| > ~9; keep samples strictly inside
        bound = 1.0 - torch.finfo(mean.dtype).eps / 2
        return torch.tanh(u).clamp(-bound, bound), squashed_log_prob(u, mean, log_std)


class Critic(nn.Module):
    """One or two Q heads on ``[features, action]``."""

    def __init__(self, in_dim: int, action_dim: int, hidden: int, layers: int, twin: bool = True):
        super().__init__()
        self.heads = nn.ModuleList(mlp(in_dim + action_dim, 1, hidden, layers) for _ in range(2 if twin else 1))

    def forward(self, features: torch.Tensor, action: torch.Tensor) -> list[torch.Tensor]:
        x = torch.cat([features, action], dim=-1)
        return [h(x).squeeze(-1) for h in self.heads]

    def min_q(self, features, action) -> torch.Tensor:
        qs = self(features, action)
        return torch.stack(qs).min(dim=0).values


# --- losses ----------------------------------------------------------------


def soft_bellman_target(reward, done, next_min_q, next_log_prob, alpha: float, discount: float) -> torch.Tensor:
    """``r + (1 - done) * discount * (min Q' - alpha * log pi)``, detached."""
    with torch.no_grad():
        soft_value = next_min_q - alpha * next_log_prob
        return reward + (1.0 - done) * discount * soft_value


def critic_target(batch: dict, target_critic: Critic, actor: Actor, alpha: float, discount: float,
                  next_features: torch.Tensor, generator=None) -> torch.Tensor:
    """Single-sample Monte Carlo soft Bellman target for a batch."""
    with torch.no_grad():
        next_action, next_log_prob = actor.sample(next_features, generator)
        next_q = target_critic.min_q(next_features, next_action)
        return soft_bellman_target(batch["reward"], batch["done"], next_q, next_log_prob, alpha, discount)


def critic_loss(qs: list[torch.Tensor], y: torch.Tensor) -> torch.Tensor:
    return torch.stack([F.mse_loss(q, y) for q in qs]).mean()


def actor_loss(log_prob: torch.Tensor, min_q: torch.Tensor, alpha) -> torch.Tensor:
    return (alpha * log_prob - min_q).mean()


def temperature_loss(log_alpha: torch.Tensor, log_prob: torch.Tensor, target_entropy: float) -> torch.Tensor:
    return (-log_alpha.exp() * (log_prob + target_entropy).detach()).mean()


@torch.no_grad()
def soft_update(target: nn.Module, online: nn.Module, tau: float) -> None:
    tp, op = list(target.parameters()), list(online.parameters())
    if len(tp) != len(op):
        raise ValueError("target and online networks have different parameter lists")
    for t, o in zip(tp, op):
        if t.shape != o.shape:
            raise ValueError(f"parameter shape mismatch: {tuple(t.shape)} vs {tuple(o.shape)}")
        t.mul_(1.0 - tau).add_(o, alpha=tau)


# --- agent -----------------------------------------------------------------


class FeatureNet(nn.Module):
    """Maps an observation payload (and optional camera delta) to the actor/critic input."""

    out_dim: int

    def forward(self, obs: torch.Tensor, camera_delta: Optional[torch.Tensor] = None) -> torch.Tensor:
        raise NotImplementedError


class VectorFeatures(FeatureNet):
    def __init__(self, dim: int):
        super().__init__()
        self.out_dim = dim

    def forward(self, obs, camera_delta=None):
        return obs.float()


class SACAgent(nn.Module):
    """SAC on top of a feature network that is trained only by the critic loss."""

    def __init__(self, features: FeatureNet, action_dim: int, cfg: SACConfig = SACConfig(), seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.action_dim = action_dim
        self.features = features
        d = features.out_dim
        self.actor = Actor(d, action_dim, cfg.hidden_units, cfg.hidden_layers)
        self.critic = Critic(d, action_dim, cfg.hidden_units, cfg.hidden_layers, cfg.twin_critics)
        init_uniform_(self.actor, seed + 1)
        init_uniform_(self.critic, seed + 2)
        self.target_features = copy.deepcopy(features)
        self.target_critic = copy.deepcopy(self.critic)
        for p in list(self.target_features.parameters()) + list(self.target_critic.parameters()):
            p.requires_grad_(False)
        self.log_alpha = nn.Parameter(torch.tensor(math.log(cfg.initial_temperature)))
        self.target_entropy = float(-action_dim if cfg.target_entropy is None else cfg.target_entropy)

        lr = cfg.learning_rate
        self.critic_opt = torch.optim.Adam(list(self.critic.parameters()) + list(self.features.parameters()), lr=lr)
        self.actor_opt = torch.optim.Adam(self.actor.parameters(), lr=lr)
        self.alpha_opt = torch.optim.Adam([self.log_alpha], lr=lr)
        self.lr_schedule: Optional[Callable[[int], float]] = None
        self.generator = torch.Generator().manual_seed(seed + 3)
        self.counts = {"critic": 0, "actor": 0, "target": 0}

    @property
    def alpha(self) -> torch.Tensor:
        return self.log_alpha.exp()

    def gradient_routing(self) -> dict[str, list[str]]:
        """Which parameter groups each loss updates."""
        critic_groups = ["critic"] + (["encoder"] if next(self.features.parameters(), None) is not None else [])
        return {"critic_loss": critic_groups, "actor_loss": ["actor"], "temperature_loss": ["log_alpha"]}

    @torch.no_grad()
    def act(self, obs: torch.Tensor, camera_delta: Optional[torch.Tensor] = None, deterministic: bool = False):
        """Batched actions in [-1, 1]: ``tanh(mean)`` when deterministic, else a sample."""
        feat = self.features(obs, camera_delta)
        if deterministic:
            mean, _ = self.actor(feat)
            return torch.tanh(mean)
        return self.actor.sample(feat, self.generator)[0]

    def _set_lr(self, step: int) -> None:
        if self.lr_schedule is None:
            return
        lr = self.lr_schedule(step)
        for opt in (self.critic_opt, self.actor_opt, self.alpha_opt):
            for g in opt.param_groups:
                g["lr"] = lr

    def update_critic(self, batch: dict) -> tuple[float, torch.Tensor]:
        with torch.no_grad():
            next_feat = self.target_features(batch["next_obs"], batch.get("next_camera_delta"))
        y = critic_target(batch, self.target_critic, self.actor, self.alpha.item(), self.cfg.discount, next_feat,
                          self.generator)
        feat = self.features(batch["obs"], batch.get("camera_delta"))
        loss = critic_loss(self.critic(feat, batch["action"]), y)
        self.critic_opt.zero_grad(set_to_none=True)
        loss.backward()
        self.critic_opt.step()
        self.counts["critic"] += 1
        return loss.item(), feat.detach()

    def update_actor_and_alpha(self, feat: torch.Tensor) -> tuple[float, float]:
        action, log_prob = self.actor.sample(feat, self.generator)
        loss = actor_loss(log_prob, self.critic.min_q(feat, action), self.alpha.detach())
        self.actor_opt.zero_grad(set_to_none=True)
        loss.backward(inputs=list(self.actor.parameters()))
        self.actor_opt.step()
        a_loss = temperature_loss(self.log_alpha, log_prob, self.target_entropy)
        self.alpha_opt.zero_grad(set_to_none=True)
        a_loss.backward(inputs=[self.log_alpha])
        self.alpha_opt.step()
        self.counts["actor"] += 1
        return loss.item(), -log_prob.mean().item()

    def update_targets(self) -> None:
        tau = self.cfg.target_update_rate
        soft_update(self.target_critic, self.critic, tau)
        soft_update(self.target_features, self.features, tau)
        self.counts["target"] += 1

    def update_step(self, buffer: ReplayBuffer, step: int) -> dict:
        """One critic update, plus actor/temperature and target updates on even steps."""
        diag = {"updated": False, "actor_updated": False, "critic_loss": float("nan"), "actor_loss": float("nan"),
                "alpha": self.alpha.item(), "entropy": float("nan")}
        if len(buffer) < self.cfg.batch_size:
            diag["reason"] = "insufficient_buffer"
            return diag
        self._set_lr(step)
        batch = self.to_batch(buffer.sample(self.cfg.batch_size))
        diag["critic_loss"], feat = self.update_critic(batch)
        if step % self.cfg.actor_update_frequency == 0:
            diag["actor_loss"], diag["entropy"] = self.update_actor_and_alpha(feat)
            diag["actor_updated"] = True
        if step % self.cfg.target_update_frequency == 0:
            self.update_targets()
        diag["alpha"] = self.alpha.item()
        diag["updated"] = True
        return diag

    def to_batch(self, raw: dict) -> dict:
        return {k: torch.as_tensor(v) for k, v in raw.items()}
