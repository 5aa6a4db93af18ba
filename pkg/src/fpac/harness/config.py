"""Run configuration: flat ``key = value`` text files.

Every key maps onto one field of the nested run configuration. Unknown keys,
malformed lines and out-of-range values raise :class:`ConfigError` naming the
offending key. Defaults are the full-scale settings (84x84 RGB, K = 32, beta = 0.5,
batch 128, 1024-unit heads); the toy presets in ``configs/`` shrink them.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from fpac.agents import AgentConfig
from fpac.encoder import ConfigError, EncoderConfig, output_shape
from fpac.envs import EnvSpec
from fpac.featpoint import ExtractorConfig
from fpac.sac import SACConfig


@dataclass(frozen=True)
class RunConfig:
    env: EnvSpec = EnvSpec("point_reacher_dense", frame=(3, 84, 84))
    agent: AgentConfig = AgentConfig()
    total_env_steps: int = 500_000
    eval_interval: int = 2500
    eval_episodes: int = 10
    seed: int = 0
    output_dir: str = "runs/default"


AUTO = "auto"


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _opt(conv):
    def parse(s: str):
        return None if s.strip().lower() == AUTO else conv(s)

    return parse


# key -> (path into RunConfig, parser)
KEYS: dict[str, tuple[tuple[str, ...], Any]] = {
    "env": (("env", "name"), str),
    "agent": (("agent", "kind"), str),
    "seed": (("seed",), int),
    "total_env_steps": (("total_env_steps",), int),
    "eval_interval": (("eval_interval",), int),
    "evaluation_episodes": (("eval_episodes",), int),
    "output_dir": (("output_dir",), str),
    "observation_size": (("env", "frame"), None),
    "frame_channels": (("env", "frame"), None),
    "episode_length": (("env", "episode_length"), int),
    "action_repeat": (("env", "action_repeat"), int),
    "replay_buffer_capacity": (("agent", "sac", "replay_capacity"), int),
    "batch_size": (("agent", "sac", "batch_size"), int),
    "learning_rate": (("agent", "sac", "learning_rate"), float),
    "discount_factor": (("agent", "sac", "discount"), float),
    "initial_random_steps": (("agent", "sac", "initial_random_steps"), int),
    "initial_temperature": (("agent", "sac", "initial_temperature"), float),
    "target_update_rate": (("agent", "sac", "target_update_rate"), float),
    "target_update_frequency": (("agent", "sac", "target_update_frequency"), int),
    "actor_update_frequency": (("agent", "sac", "actor_update_frequency"), int),
    "target_entropy": (("agent", "sac", "target_entropy"), _opt(float)),
    "twin_critics": (("agent", "sac", "twin_critics"), _bool),
    "mlp_hidden_layers": (("agent", "sac", "hidden_layers"), int),
    "mlp_hidden_units": (("agent", "sac", "hidden_units"), int),
    "encoder_layers": (("agent", "encoder", "conv_layers"), int),
    "encoder_channels": (("agent", "encoder", "channels_per_layer"), int),
    "number_of_feature_points": (("agent", "num_points"), int),
    "feature_point_temperature": (("agent", "extractor", "temperature"), float),
    "softmax_mode": (("agent", "extractor", "mode"), str),
    "relative_coordinates": (("agent", "extractor", "relative"), _bool),
    "use_scalar_feature": (("agent", "extractor", "use_scalar_feature"), _bool),
    "use_velocity": (("agent", "extractor", "use_velocity"), _bool),
    "scalar_velocity": (("agent", "extractor", "scalar_velocity"), _bool),
    "use_camera_delta": (("agent", "use_camera_delta"), _opt(_bool)),
    "pixel_latent": (("agent", "pixel_latent"), int),
    "frame_stack": ((), int),
}

# emitted in this order by serialize()
ORDER = list(KEYS)


def _get(cfg: RunConfig, key: str):
    if key == "observation_size":
        return cfg.env.frame[1]
    if key == "frame_channels":
        return cfg.env.frame[0]
    if key == "frame_stack":
        return 2
    obj = cfg
    for p in KEYS[key][0]:
        obj = getattr(obj, p)
    return obj


def _format(value) -> str:
    if value is None:
        return AUTO
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def parse_pairs(pairs: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    """Apply string overrides to ``base`` (defaults when None)."""
    flat: dict[str, Any] = {}
    for key, raw in pairs.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        path, conv = KEYS[key]
        try:
            flat[key] = int(raw) if conv is None else conv(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from None
    if flat.get("frame_stack", 2) != 2:
        raise ConfigError("frame_stack: only 2 is supported")
    return build(flat, base)


def build(flat: dict[str, Any], base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    # flatten to plain values first so each nested dataclass is validated exactly once
    values = {k: _get(cfg, k) for k in ORDER}
    values.update(flat)
    frame = (values["frame_channels"], values["observation_size"], values["observation_size"])
    layers = values["encoder_layers"]
    env = _checked("env", lambda: EnvSpec(
        values["env"], frame=frame, episode_length=values["episode_length"], action_repeat=values["action_repeat"],
        dt=cfg.env.dt, reward_scale=cfg.env.reward_scale,
    ))
    sac_kwargs = {KEYS[k][0][-1]: values[k] for k in ORDER if KEYS[k][0][:2] == ("agent", "sac")}
    sac = _checked_keys(sac_kwargs, lambda: SACConfig(**sac_kwargs))
    ext_kwargs = {KEYS[k][0][-1]: values[k] for k in ORDER if KEYS[k][0][:2] == ("agent", "extractor")}
    extractor = _checked_keys(ext_kwargs, lambda: ExtractorConfig(**ext_kwargs))
    if layers < 1:
        raise ConfigError(f"encoder_layers: must be >= 1, got {layers}")
    encoder = _checked("encoder_channels", lambda: EncoderConfig(
        input_size=frame, conv_layers=layers, channels_per_layer=values["encoder_channels"],
        strides=(2,) + (1,) * (layers - 1), projection_channels=values["number_of_feature_points"],
    ))
    agent = _checked("agent", lambda: AgentConfig(
        kind=values["agent"], num_points=values["number_of_feature_points"], extractor=extractor, encoder=encoder,
        sac=sac, use_camera_delta=values["use_camera_delta"], pixel_latent=values["pixel_latent"],
        seed=values["seed"],
    ))
    run = RunConfig(env, agent, values["total_env_steps"], values["eval_interval"], values["evaluation_episodes"],
                    values["seed"], values["output_dir"])
    validate(run)
    return run


def _checked(key: str, make):
    try:
        return make()
    except ConfigError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _checked_keys(kwargs: dict, make):
    try:
        return make()
    except ValueError as exc:
        msg = str(exc)
        field_to_key = {KEYS[k][0][-1]: k for k in KEYS if KEYS[k][0]}
        for fname, key in field_to_key.items():
            if fname in kwargs and fname in msg:
                raise ConfigError(f"{key}: {msg}") from None
        raise ConfigError(msg) from None


def validate(run: RunConfig) -> None:
    if run.total_env_steps < run.agent.sac.initial_random_steps:
        raise ConfigError(
            f"total_env_steps: {run.total_env_steps} is below initial_random_steps {run.agent.sac.initial_random_steps}"
        )
    if run.eval_interval < 1 or run.eval_interval % run.env.action_repeat:
        raise ConfigError(f"eval_interval: must be a positive multiple of action_repeat ({run.env.action_repeat})")
    if run.eval_episodes < 1:
        raise ConfigError("evaluation_episodes: must be >= 1")
    if run.agent.kind in ("fpac", "pixel_sac"):
        c, h, w = run.env.frame
        enc = dataclasses.replace(run.agent.encoder, input_size=(c if run.agent.kind == "fpac" else 2 * c, h, w))
        try:
            output_shape(enc)
        except ConfigError as exc:
            raise ConfigError(f"observation_size: {exc}") from None


def parse_text(text: str, base: RunConfig | None = None) -> RunConfig:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: missing key")
        if key in pairs:
            raise ConfigError(f"{key}: duplicate key on line {lineno}")
        pairs[key] = value
    return parse_pairs(pairs, base)


def parse_config(path: str | Path, overrides: dict[str, str] | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = parse_text(text)
    return parse_pairs(overrides, cfg) if overrides else cfg


def serialize(cfg: RunConfig) -> str:
    return "".join(f"{k} = {_format(_get(cfg, k))}\n" for k in ORDER)


def to_dict(cfg: RunConfig) -> dict:
    return {k: _get(cfg, k) for k in ORDER}


def from_dict(d: dict) -> RunConfig:
    return parse_pairs({k: _format(v) for k, v in d.items()})


def parse_overrides(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out
