"""Training and evaluation loops."""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from fpac.agents import Agent, Observation, make_agent
from fpac.checkpoint import save_checkpoint
from fpac.envs import EnvSpec, make_env
from fpac.harness import config as config_mod
from fpac.harness.config import RunConfig
from fpac.sac import ReplayBuffer, Transition

log = logging.getLogger(__name__)

CSV_COLUMNS = ("env_step", "episode", "return_mean", "return_std", "critic_loss", "actor_loss", "alpha", "entropy")


class NumericalError(RuntimeError):
    pass


@dataclass
class RunRecord:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    updates: int = 0
    agent: Optional[Agent] = None

    @property
    def final_return(self) -> float:
        return self.rows[-1]["return_mean"] if self.rows else float("nan")


def observation(env, frame, camera_delta=None) -> Observation:
    return Observation(
        frame,
        env.true_keypoints(),
        env.state_vector(),
        np.zeros(2) if camera_delta is None else np.asarray(camera_delta, dtype=np.float64),
    )


def episode_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.default_rng([seed, 7919]).integers(0, 2**31 - 1, size=n)]


def evaluate(agent: Agent, env_spec: EnvSpec, episodes: int = 10, seed: int = 0) -> tuple[float, float]:
    """Mean and std of undiscounted returns over ``episodes`` deterministic rollouts.

    Episodes run in lockstep so the policy is evaluated on one batch per step.
    """
    envs = [make_env(env_spec) for _ in range(episodes)]
    cur, prev = [], [None] * episodes
    for env, s in zip(envs, episode_seeds(seed, episodes)):
        frame, _ = env.reset(s)
        cur.append(observation(env, frame))
    returns = np.zeros(episodes)
    for _ in range(env_spec.steps_per_episode):
        payload = np.stack([agent.payload(c, p) for c, p in zip(cur, prev)])
        deltas = np.stack([np.zeros(2) if p is None else c.camera_delta for c, p in zip(cur, prev)])
        with torch.no_grad():
            actions = agent.sac.act(torch.as_tensor(payload), torch.as_tensor(deltas, dtype=torch.float32),
                                    deterministic=True).numpy().astype(np.float64)
        for i, env in enumerate(envs):
            res = env.step(actions[i])
            returns[i] += res.reward
            prev[i] = cur[i]
            cur[i] = observation(env, res.frame, res.camera_delta)
    return float(returns.mean()), float(returns.std())


def _commit_id() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _fmt(x: float) -> str:
    return repr(float(x))


class _Diagnostics:
    def __init__(self):
        self.sums = {k: 0.0 for k in ("critic_loss", "actor_loss", "alpha", "entropy")}
        self.counts = dict.fromkeys(self.sums, 0)

    def add(self, diag: dict) -> None:
        for k in self.sums:
            v = diag.get(k, float("nan"))
            if not math.isnan(v):
                self.sums[k] += v
                self.counts[k] += 1

    def flush(self) -> dict:
        out = {k: self.sums[k] / self.counts[k] if self.counts[k] else float("nan") for k in self.sums}
        self.__init__()
        return out


def expected_updates(env_steps: int, action_repeat: int, initial_random_steps: int) -> int:
    """Updates owed after ``env_steps``: one per emitted step past the random warm-up."""
    emitted = -(-env_steps // action_repeat)
    return max(emitted - initial_random_steps // action_repeat, 0)


def train(cfg: RunConfig, write: bool = True, progress: bool = False,
          stop: Optional[Callable[[dict], bool]] = None) -> RunRecord:
    """Random warm-up, then one update per emitted step; periodic evaluation.

    ``env_step`` counts physics steps, so it is independent of the action repeat.
    ``stop`` is called with each evaluation row and ends the run early when it
    returns true.
    """
    torch.manual_seed(cfg.seed)
    out = Path(cfg.output_dir)
    spec = cfg.env
    env = make_env(spec)
    agent = make_agent(cfg.agent, spec)
    sac_cfg = cfg.agent.sac
    buffer = ReplayBuffer(sac_cfg.replay_capacity, seed=cfg.seed)
    rng = np.random.default_rng([cfg.seed, 17])
    seed_rng = np.random.default_rng([cfg.seed, 23])
    record = RunRecord(agent=agent)
    record.metadata = {
        "config": config_mod.to_dict(cfg),
        "seed": cfg.seed,
        "commit": _commit_id(),
        "python": platform.python_version(),
        "torch": torch.__version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    csv_file = None
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(config_mod.serialize(cfg), encoding="utf-8")
        csv_file = open(out / "progress.csv", "w", newline="", encoding="utf-8")
        writer = csv.writer(csv_file, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        csv_file.flush()
    t0 = time.perf_counter()
    diags = _Diagnostics()
    try:
        frame, _ = env.reset(int(seed_rng.integers(0, 2**31 - 1)))
        cur, prev = observation(env, frame), None
        env_step = episode = updates = 0
        while env_step < cfg.total_env_steps:
            payload = agent.payload(cur, prev)
            delta = np.zeros(2) if prev is None else cur.camera_delta
            if env_step < sac_cfg.initial_random_steps:
                action = rng.uniform(-1.0, 1.0, size=spec.action_dim)
            else:
                action = agent.act(payload, delta)
            res = env.step(action)
            nxt = observation(env, res.frame, res.camera_delta)
            terminal = res.done and not res.info.get("truncated", False)
            buffer.push(Transition(payload, action, res.reward, agent.payload(nxt, cur), terminal, delta,
                                   res.camera_delta))
            env_step += spec.action_repeat
            if env_step > sac_cfg.initial_random_steps:
                diag = agent.sac.update_step(buffer, updates)
                updates += 1
                if diag["updated"]:
                    bad = [k for k in ("critic_loss", "actor_loss")
                           if (k == "critic_loss" or diag["actor_updated"]) and not math.isfinite(diag[k])]
                    if bad:
                        raise NumericalError(f"{bad[0]} became {diag[bad[0]]} at env step {env_step}")
                    diags.add(diag)
            if res.done:
                episode += 1
                frame, _ = env.reset(int(seed_rng.integers(0, 2**31 - 1)))
                cur, prev = observation(env, frame), None
            else:
                cur, prev = nxt, cur
            if env_step % cfg.eval_interval == 0:
                mean, std = evaluate(agent, spec, cfg.eval_episodes, seed=cfg.seed + 1)
                row = {"env_step": env_step, "episode": episode, "return_mean": mean, "return_std": std,
                       **diags.flush()}
                record.rows.append(row)
                if csv_file is not None:
                    writer.writerow([row["env_step"], row["episode"]] + [_fmt(row[c]) for c in CSV_COLUMNS[2:]])
                    csv_file.flush()
                if progress:
                    log.info("step %d episode %d return %.1f +- %.1f (%.0fs)", env_step, episode, mean, std,
                             time.perf_counter() - t0)
                if stop is not None and stop(row):
                    break
        owed = expected_updates(env_step, spec.action_repeat, sac_cfg.initial_random_steps)
        if updates != owed:
            raise RuntimeError(f"performed {updates} updates over {env_step} env steps, expected {owed}")
        record.updates = updates
        record.metadata["stopped_early"] = env_step < cfg.total_env_steps
    except NumericalError as exc:
        if write:
            save_checkpoint(out / "checkpoint_nan.pt", agent, extra={"error": str(exc)})
            (out / "nan_report.json").write_text(json.dumps({"error": str(exc)}, indent=2), encoding="utf-8")
        raise
    finally:
        if csv_file is not None:
            csv_file.close()
    record.metadata["wall_clock_s"] = time.perf_counter() - t0
    record.metadata["updates"] = record.updates
    if write:
        save_checkpoint(out / "checkpoint.pt", agent)
        (out / "metadata.json").write_text(json.dumps(record.metadata, indent=2, sort_keys=True), encoding="utf-8")
    return record
