"""Deterministic pixel control tasks.

Each task integrates its physics with semi-implicit Euler at ``dt`` and
repeats every agent action ``action_repeat`` times, summing the per-step
rewards. Episodes have a fixed length of ``episode_length`` physics steps;
the final emitted step is a time-limit truncation, never a true termination.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace

import numpy as np

from fpac.envs.render import Camera2D, Disk, Rect, Rod, Scene, Stripes, project, render_scene


class InvalidStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    name: str
    frame: tuple = (1, 48, 48)
    episode_length: int = 1000
    action_repeat: int = 4
    dt: float = 0.02
    reward_scale: float = 1.0

    def __post_init__(self):
        if self.name not in ENV_NAMES:
            raise ValueError(f"unknown environment {self.name!r}; expected one of {sorted(ENV_NAMES)}")
        if self.action_repeat < 1 or self.episode_length % self.action_repeat:
            raise ValueError(
                f"episode_length ({self.episode_length}) must be a positive multiple of action_repeat ({self.action_repeat})"
            )
        if len(self.frame) != 3 or self.frame[0] not in (1, 3) or min(self.frame[1:]) < 2:
            raise ValueError(f"frame must be (1 or 3, H >= 2, W >= 2), got {self.frame}")

    @property
    def action_dim(self) -> int:
        return ENV_NAMES[self.name].action_dim

    @property
    def num_objects(self) -> int:
        return len(ENV_NAMES[self.name].objects)

    @property
    def steps_per_episode(self) -> int:
        return self.episode_length // self.action_repeat


@dataclass
class StepResult:
    frame: np.ndarray
    reward: float
    done: bool
    camera_delta: np.ndarray
    info: dict = field(default_factory=dict)


class PixelEnv:
    """Base class. Subclasses define the state, physics, scene and objects."""

    action_dim: int = 1
    objects: tuple = ()
    palette: dict = {}

    def __init__(self, spec: EnvSpec, palette: dict | None = None):
        self.spec = spec
        self.colors = dict(self.palette)
        if palette:
            unknown = set(palette) - set(self.colors)
            if unknown:
                raise ValueError(f"unknown palette entries {sorted(unknown)}")
            self.colors.update(palette)
        self.state = None
        self._t = 0
        self._done = True
        self._rng = np.random.default_rng(0)
        self._camera = None

    # --- task hooks -----------------------------------------------------
    def _init_state(self, rng: np.random.Generator):
        raise NotImplementedError

    def _physics_step(self, state, action: np.ndarray) -> float:
        raise NotImplementedError

    def _scene(self, state) -> Scene:
        raise NotImplementedError

    def object_positions(self, state) -> np.ndarray:
        raise NotImplementedError

    def state_vector(self, state=None) -> np.ndarray:
        raise NotImplementedError

    def camera(self, state=None) -> Camera2D:
        return Camera2D((0.0, 0.0), 2.0)

    # --- public API -----------------------------------------------------
    @property
    def frame_hw(self) -> tuple[int, int]:
        return self.spec.frame[1], self.spec.frame[2]

    def reset(self, seed: int):
        self._rng = np.random.default_rng(seed)
        self.state = self._init_state(self._rng)
        self._t = 0
        self._done = False
        self._camera = self.camera(self.state)
        return self.render(), copy.copy(self.state)

    def step(self, action) -> StepResult:
        if self.state is None or self._done:
            raise InvalidStateError("step() called on a finished episode; call reset() first")
        a = np.asarray(action, dtype=np.float64).reshape(self.action_dim)
        clipped = bool(np.any(np.abs(a) > 1.0)) or not np.all(np.isfinite(a))
        a = np.clip(np.nan_to_num(a), -1.0, 1.0)
        reward = 0.0
        for _ in range(self.spec.action_repeat):
            reward += self._physics_step(self.state, a)
        reward *= self.spec.reward_scale
        self._t += self.spec.action_repeat
        self._done = self._t >= self.spec.episode_length
        cam = self.camera(self.state)
        half_w, half_h = cam.half_extent(*self.frame_hw)
        delta = np.array(
            [(cam.center[0] - self._camera.center[0]) / half_w, -(cam.center[1] - self._camera.center[1]) / half_h]
        )
        self._camera = cam
        info = {
            "keypoints": self.true_keypoints(),
            "state": self.state_vector(),
            "truncated": self._done,
            "action_clipped": clipped,
            "env_steps": self._t,
        }
        return StepResult(self.render(), float(reward), self._done, delta, info)

    def render(self, state=None, camera: Camera2D | None = None) -> np.ndarray:
        state = self.state if state is None else state
        camera = self.camera(state) if camera is None else camera
        return render_scene(self._scene(state), camera, self.spec.frame)

    def true_keypoints(self, state=None, camera: Camera2D | None = None) -> np.ndarray:
        """``(K, 3)`` projected object centres; ``m`` is 1 in frame and -1 outside."""
        state = self.state if state is None else state
        camera = self.camera(state) if camera is None else camera
        xy = project(self.object_positions(state), camera, *self.frame_hw)
        visible = np.all(np.abs(xy) <= 1.0, axis=-1)
        return np.concatenate([xy, np.where(visible, 1.0, -1.0)[:, None]], axis=-1)


# ---------------------------------------------------------------------------


@dataclass
class ReacherState:
    pos: np.ndarray
    vel: np.ndarray
    target: np.ndarray


class PointReacher(PixelEnv):
    """Push a point mass onto a target disk with a 2D force."""

    action_dim = 2
    objects = ("agent", "target")
    palette = {"background": (0.05, 0.05, 0.1), "agent": (1.0, 1.0, 1.0), "target": (0.9, 0.2, 0.2)}
    arena = 0.8
    force = 15.0
    damping = 6.0
    radius = 0.1
    reward_scale_dist = 0.25

    def __init__(self, spec: EnvSpec, sparse: bool = False, palette: dict | None = None):
        super().__init__(spec, palette)
        self.sparse = sparse

    def _init_state(self, rng):
        pos = rng.uniform(-0.6, 0.6, size=2)
        target = rng.uniform(-0.6, 0.6, size=2)
        return ReacherState(pos, np.zeros(2), target)

    def _physics_step(self, s, a):
        dt = self.spec.dt
        s.vel = s.vel + dt * (self.force * a - self.damping * s.vel)
        s.pos = s.pos + dt * s.vel
        hit = np.abs(s.pos) > self.arena
        s.pos = np.clip(s.pos, -self.arena, self.arena)
        s.vel = np.where(hit, 0.0, s.vel)
        d = float(np.hypot(*(s.pos - s.target)))
        if self.sparse:
            return 1.0 if d < self.radius else 0.0
        if d < self.radius:
            return 1.0
        return math.exp(-(d - self.radius) / self.reward_scale_dist)

    def _scene(self, s):
        c = self.colors
        return Scene(
            c["background"],
            [Disk(tuple(s.target), self.radius, c["target"]), Disk(tuple(s.pos), 0.08, c["agent"])],
        )

    def object_positions(self, s):
        return np.stack([s.pos, s.target])

    def state_vector(self, s=None):
        s = self.state if s is None else s
        return np.concatenate([s.pos, s.vel / 2.5, s.target]).astype(np.float32)


@dataclass
class PendulumState:
    theta: float
    omega: float


class PendulumSwingup(PixelEnv):
    """Torque-limited pendulum starting at the bottom; ``theta = 0`` is upright."""

    action_dim = 1
    objects = ("pivot", "tip")
    palette = {"background": (0.05, 0.05, 0.1), "pole": (0.8, 0.8, 0.3), "tip": (1.0, 1.0, 1.0), "pivot": (0.4, 0.4, 0.8)}
    gravity = 10.0  # g / l
    max_torque = 4.0
    damping = 0.1
    max_speed = 12.0
    length = 0.6
    pivot = (0.0, 0.0)
    # reward is damped by fast rotation so spinning through the top does not pay
    speed_penalty = 0.1

    def _init_state(self, rng):
        return PendulumState(math.pi + float(rng.uniform(-0.1, 0.1)), 0.0)

    def _physics_step(self, s, a):
        dt = self.spec.dt
        acc = self.gravity * math.sin(s.theta) - self.damping * s.omega + self.max_torque * float(a[0])
        s.omega = float(np.clip(s.omega + dt * acc, -self.max_speed, self.max_speed))
        s.theta = (s.theta + dt * s.omega + math.pi) % (2 * math.pi) - math.pi
        return (math.cos(s.theta) + 1.0) / 2.0 / (1.0 + self.speed_penalty * s.omega**2)

    def energy(self, s=None) -> float:
        s = self.state if s is None else s
        return 0.5 * s.omega**2 + self.gravity * math.cos(s.theta)

    def tip(self, s):
        return (self.pivot[0] + self.length * math.sin(s.theta), self.pivot[1] + self.length * math.cos(s.theta))

    def _scene(self, s):
        c = self.colors
        tip = self.tip(s)
        return Scene(
            c["background"],
            [Rod(self.pivot, tip, 0.06, c["pole"]), Disk(self.pivot, 0.05, c["pivot"]), Disk(tip, 0.09, c["tip"])],
        )

    def object_positions(self, s):
        return np.array([self.pivot, self.tip(s)])

    def state_vector(self, s=None):
        s = self.state if s is None else s
        return np.array([math.cos(s.theta), math.sin(s.theta), s.omega / 8.0], dtype=np.float32)


@dataclass
class CatcherState:
    paddle_x: float
    paddle_v: float
    ball: np.ndarray
    ball_v: np.ndarray


class BallCatcher(PixelEnv):
    """Slide a paddle to catch falling balls; reward 1 per catch."""

    action_dim = 1
    objects = ("paddle", "ball")
    palette = {"background": (0.05, 0.05, 0.1), "paddle": (0.3, 0.9, 0.3), "ball": (1.0, 1.0, 1.0)}
    paddle_y = -0.7
    paddle_half = (0.15, 0.04)
    ball_radius = 0.07
    arena = 0.85
    force = 12.0
    damping = 5.0
    gravity = 2.0

    def _spawn(self, rng):
        return np.array([rng.uniform(-0.7, 0.7), 0.8]), np.array([rng.uniform(-0.5, 0.5), 0.0])

    def _init_state(self, rng):
        ball, vel = self._spawn(rng)
        return CatcherState(0.0, 0.0, ball, vel)

    def _physics_step(self, s, a):
        dt = self.spec.dt
        s.paddle_v += dt * (self.force * float(a[0]) - self.damping * s.paddle_v)
        s.paddle_x += dt * s.paddle_v
        if abs(s.paddle_x) > self.arena:
            s.paddle_x = float(np.clip(s.paddle_x, -self.arena, self.arena))
            s.paddle_v = 0.0
        s.ball_v = s.ball_v + dt * np.array([0.0, -self.gravity])
        s.ball = s.ball + dt * s.ball_v
        if abs(s.ball[0]) > self.arena:
            s.ball[0] = np.clip(s.ball[0], -self.arena, self.arena)
            s.ball_v[0] = -s.ball_v[0]
        top = self.paddle_y + self.paddle_half[1]
        in_box = abs(s.ball[0] - s.paddle_x) < self.paddle_half[0] and self.paddle_y <= s.ball[1] <= top + 0.06
        if in_box:
            s.ball, s.ball_v = self._spawn(self._rng)
            return 1.0
        if s.ball[1] < self.paddle_y - 0.1:
            s.ball, s.ball_v = self._spawn(self._rng)
        return 0.0

    def _scene(self, s):
        c = self.colors
        return Scene(
            c["background"],
            [Rect((s.paddle_x, self.paddle_y), self.paddle_half, c["paddle"]), Disk(tuple(s.ball), self.ball_radius, c["ball"])],
        )

    def object_positions(self, s):
        return np.array([[s.paddle_x, self.paddle_y], s.ball])

    def state_vector(self, s=None):
        s = self.state if s is None else s
        return np.array([s.paddle_x, s.paddle_v / 2.4, *s.ball, *(s.ball_v / 2.0)], dtype=np.float32)


@dataclass
class RunnerState:
    x: float
    v: float


class ScrollRunner(PixelEnv):
    """Run right along an endless striped floor; the camera follows the runner.

    The runner always sits at the image centre, so its motion is only visible
    through the floor texture and the world-fixed posts.
    """

    action_dim = 1
    objects = ("runner", "post")
    palette = {
        "background": (0.05, 0.05, 0.1),
        "runner": (1.0, 1.0, 1.0),
        "post": (0.5, 0.5, 0.9),
        "floor": (0.3, 0.3, 0.3),
        "floor_alt": (0.18, 0.18, 0.18),
    }
    force = 8.0
    damping = 2.0
    runner_y = -0.25
    floor_y = -0.4
    post_spacing = 1.5
    stripe_period = 0.5

    @property
    def max_speed(self) -> float:
        return self.force / self.damping

    def _init_state(self, rng):
        return RunnerState(float(rng.uniform(-0.2, 0.2)), 0.0)

    def _physics_step(self, s, a):
        s.v += self.spec.dt * (self.force * float(a[0]) - self.damping * s.v)
        s.x += self.spec.dt * s.v
        return float(np.clip(s.v / self.max_speed, -1.0, 1.0))

    def camera(self, state=None):
        state = self.state if state is None else state
        return Camera2D((state.x, 0.0), 2.0)

    def _post_x(self, s) -> float:
        return round(s.x / self.post_spacing) * self.post_spacing

    def _scene(self, s):
        c = self.colors
        items = [Stripes(self.floor_y, self.stripe_period, c["floor"], c["floor_alt"])]
        base = math.floor((s.x - 3.0) / self.post_spacing)
        for i in range(base, base + int(6.0 / self.post_spacing) + 2):
            items.append(Rect((i * self.post_spacing, self.floor_y + 0.15), (0.03, 0.15), c["post"]))
        items.append(Disk((s.x, self.runner_y), 0.12, c["runner"]))
        return Scene(c["background"], items)

    def object_positions(self, s):
        return np.array([[s.x, self.runner_y], [self._post_x(s), self.floor_y + 0.15]])

    def state_vector(self, s=None):
        s = self.state if s is None else s
        phase = (s.x % self.post_spacing) / self.post_spacing
        return np.array([s.v / self.max_speed, math.cos(2 * math.pi * phase), math.sin(2 * math.pi * phase)], dtype=np.float32)


ENV_NAMES = {
    "point_reacher_dense": PointReacher,
    "point_reacher_sparse": PointReacher,
    "pendulum_swingup": PendulumSwingup,
    "ball_catcher": BallCatcher,
    "scroll_runner": ScrollRunner,
}


def make_env(spec: EnvSpec | str, palette: dict | None = None, **spec_kwargs) -> PixelEnv:
    if isinstance(spec, str):
        spec = EnvSpec(spec, **spec_kwargs)
    elif spec_kwargs:
        spec = replace(spec, **spec_kwargs)
    cls = ENV_NAMES[spec.name]
    if cls is PointReacher:
        return PointReacher(spec, sparse=spec.name.endswith("sparse"), palette=palette)
    return cls(spec, palette=palette)


def reset(spec: EnvSpec | str, seed: int):
    """Build an environment and reset it; returns ``(env, frame, state)``."""
    env = make_env(spec)
    frame, state = env.reset(seed)
    return env, frame, state
