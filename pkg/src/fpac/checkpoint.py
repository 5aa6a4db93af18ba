"""Versioned checkpoints: the full run configuration plus every tensor of the agent."""

from __future__ import annotations

from pathlib import Path

import torch

FORMAT_VERSION = 1


def save_checkpoint(path, agent, extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "agent_config": _agent_settings(agent),
        "state_dict": agent.sac.state_dict(),
        "counts": dict(agent.sac.counts),
        "extra": extra or {},
    }
    torch.save(payload, path)


def _agent_settings(agent) -> dict:
    from fpac.harness import config as config_mod
    from fpac.harness.config import RunConfig

    run = RunConfig(env=agent.env_spec, agent=agent.cfg, total_env_steps=max(agent.cfg.sac.initial_random_steps, 0),
                    seed=agent.cfg.seed)
    return config_mod.to_dict(run)


def load_checkpoint(path):
    """Rebuild the agent stored at ``path``; returns ``(agent, run_config)``."""
    from fpac.agents import make_agent
    from fpac.harness import config as config_mod

    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {version!r} (expected {FORMAT_VERSION})")
    run = config_mod.from_dict(payload["agent_config"])
    agent = make_agent(run.agent, run.env)
    agent.sac.load_state_dict(payload["state_dict"])
    agent.sac.counts.update(payload.get("counts", {}))
    return agent, run
