"""The four agent kinds: fpac, pixel_sac, keypoint_sac and state_sac.

Every agent stores a compact observation payload in the replay buffer and
turns it into actor/critic inputs with a feature network:

* fpac: two uint8 frames, encoded separately with shared weights, then the
  feature-point bottleneck and ``[x_t, x_t - x_{t-1}]``;
* pixel_sac: the same two frames stacked along channels, the same conv trunk,
  then a linear projection to a 64-d latent;
* keypoint_sac: ground-truth keypoints at t and t-1 (relative coordinates);
* state_sac: the simulator's low-dimensional state.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from fpac import featpoint
from fpac.encoder import ConfigError, Encoder, EncoderConfig, init_uniform_, output_shape
from fpac.envs import EnvSpec, make_env
from fpac.featpoint import ExtractorConfig
from fpac.sac import FeatureNet, SACAgent, SACConfig, VectorFeatures

AGENT_KINDS = ("fpac", "pixel_sac", "keypoint_sac", "state_sac")
PIXEL_KINDS = ("fpac", "pixel_sac")


@dataclass(frozen=True)
class AgentConfig:
    kind: str = "fpac"
    num_points: int = 32
    extractor: ExtractorConfig = ExtractorConfig()
    encoder: EncoderConfig = EncoderConfig()
    sac: SACConfig = SACConfig()
    # None picks the task default: on for scroll_runner keypoint agents, off otherwise
    use_camera_delta: Optional[bool] = None
    pixel_latent: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ConfigError(f"unknown agent kind {self.kind!r}; expected one of {AGENT_KINDS}")
        if self.num_points < 1:
            raise ConfigError(f"num_points must be >= 1, got {self.num_points}")


@dataclass
class Observation:
    """Everything an agent may look at for one emitted frame."""

    frame: np.ndarray
    keypoints: np.ndarray
    state: np.ndarray
    camera_delta: np.ndarray = field(default_factory=lambda: np.zeros(2))


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


def frames_to_float(frames: torch.Tensor) -> torch.Tensor:
    return frames.float() / 255.0 if frames.dtype == torch.uint8 else frames.float()


class FeaturePointNet(FeatureNet):
    """Shared-weight per-frame encoder followed by the bottleneck and state builder."""

    def __init__(self, encoder: Encoder, extractor: ExtractorConfig, use_camera_delta: bool):
        super().__init__()
        self.encoder = encoder
        self.extractor = extractor
        self.use_camera_delta = use_camera_delta
        self.num_points = encoder.out_shape[0]
        self.out_dim = 6 * self.num_points

    def points(self, frames: torch.Tensor) -> torch.Tensor:
        return featpoint.extract(self.encoder(frames_to_float(frames)), self.extractor, check=False)

    def forward(self, obs, camera_delta=None):
        fps = self.points(obs)  # (B, 2, K, 3): current frame first
        delta = camera_delta if self.use_camera_delta else None
        return featpoint.build_state(fps[:, 0], fps[:, 1], delta, self.extractor)


class PixelNet(FeatureNet):
    def __init__(self, encoder: Encoder, latent: int):
        super().__init__()
        self.encoder = encoder
        self.proj = nn.Linear(int(np.prod(encoder.out_shape)), latent)
        self.norm = nn.LayerNorm(latent)
        self.out_dim = latent

    def forward(self, obs, camera_delta=None):
        x = frames_to_float(obs).flatten(1, 2)  # (B, 2C, H, W)
        return torch.tanh(self.norm(self.proj(self.encoder(x).flatten(1))))


class KeypointNet(FeatureNet):
    def __init__(self, num_points: int, extractor: ExtractorConfig, use_camera_delta: bool):
        super().__init__()
        self.extractor = extractor
        self.use_camera_delta = use_camera_delta
        self.out_dim = 6 * num_points

    def forward(self, obs, camera_delta=None):
        obs = obs.float()
        delta = camera_delta if self.use_camera_delta else None
        return featpoint.build_state(obs[:, 0], obs[:, 1], delta, self.extractor)


class Agent:
    """An agent kind wired to an environment spec."""

    def __init__(self, cfg: AgentConfig, env_spec: EnvSpec):
        self.cfg = cfg
        self.env_spec = env_spec
        self.kind = cfg.kind
        self.use_camera_delta = self._camera_default(cfg, env_spec)
        self.encoder: Optional[Encoder] = None
        features = self._build_features()
        self.sac = SACAgent(features, env_spec.action_dim, cfg.sac, seed=cfg.seed)

    @staticmethod
    def _camera_default(cfg: AgentConfig, env_spec: EnvSpec) -> bool:
        if cfg.kind in ("pixel_sac", "state_sac"):
            return False
        if cfg.use_camera_delta is not None:
            return cfg.use_camera_delta
        return env_spec.name == "scroll_runner"

    def _build_features(self) -> FeatureNet:
        cfg, spec = self.cfg, self.env_spec
        if cfg.kind == "state_sac":
            env = make_env(spec)
            env.reset(0)
            return VectorFeatures(len(env.state_vector()))
        if cfg.kind == "keypoint_sac":
            extractor = dataclasses.replace(cfg.extractor, relative=True)
            return KeypointNet(spec.num_objects, extractor, self.use_camera_delta)
        c, h, w = spec.frame
        if cfg.kind == "fpac":
            enc_cfg = dataclasses.replace(cfg.encoder, input_size=(c, h, w), projection_channels=cfg.num_points)
            self.encoder = Encoder(enc_cfg, seed=cfg.seed)
            return FeaturePointNet(self.encoder, cfg.extractor, self.use_camera_delta)
        enc_cfg = dataclasses.replace(cfg.encoder, input_size=(2 * c, h, w), projection_channels=None)
        self.encoder = Encoder(enc_cfg, seed=cfg.seed)
        net = PixelNet(self.encoder, cfg.pixel_latent)
        init_uniform_(net.proj, cfg.seed + 5)
        return net

    @property
    def state_dim(self) -> int:
        return self.sac.features.out_dim

    # --- observations -------------------------------------------------
    def payload(self, cur: Observation, prev: Optional[Observation] = None) -> np.ndarray:
        """Replay-buffer observation for the pair (current, previous); prev=None repeats current."""
        prev = cur if prev is None else prev
        if self.kind in PIXEL_KINDS:
            return np.stack([to_uint8(cur.frame), to_uint8(prev.frame)])
        if self.kind == "keypoint_sac":
            return np.stack([cur.keypoints, prev.keypoints]).astype(np.float32)
        return np.asarray(cur.state, dtype=np.float32)

    def observe(self, cur: Observation, prev: Optional[Observation] = None) -> torch.Tensor:
        """Actor/critic input (state vector or latent) for one step.

        ``prev=None`` is the episode-start convention: the current frame is
        reused, so velocities are zero.
        """
        if prev is not None and self.kind in PIXEL_KINDS and np.shape(prev.frame) != np.shape(cur.frame):
            raise ValueError(f"frame shapes differ: {np.shape(cur.frame)} vs {np.shape(prev.frame)}")
        obs = torch.as_tensor(self.payload(cur, prev))[None]
        delta = np.zeros(2) if prev is None else cur.camera_delta
        delta = torch.as_tensor(np.asarray(delta, dtype=np.float32))[None]
        with torch.no_grad():
            return self.sac.features(obs, delta)[0]

    def act(self, payload: np.ndarray, camera_delta=None, deterministic: bool = False) -> np.ndarray:
        obs = torch.as_tensor(payload)[None]
        delta = None
        if camera_delta is not None:
            delta = torch.as_tensor(np.asarray(camera_delta, dtype=np.float32))[None]
        return self.sac.act(obs, delta, deterministic)[0].numpy().astype(np.float64)

    def gradient_routing(self) -> dict[str, list[str]]:
        return self.sac.gradient_routing()

    def encoder_parameters(self) -> list[torch.Tensor]:
        return [] if self.encoder is None else list(self.encoder.parameters())


def make_agent(cfg: AgentConfig, env_spec: EnvSpec) -> Agent:
    if cfg.kind in PIXEL_KINDS:
        c, h, w = env_spec.frame
        in_c = c if cfg.kind == "fpac" else 2 * c
        try:
            output_shape(dataclasses.replace(cfg.encoder, input_size=(in_c, h, w)))
        except ConfigError as exc:
            raise ConfigError(f"frame shape {env_spec.frame} is incompatible with the encoder: {exc}") from exc
    return Agent(cfg, env_spec)
