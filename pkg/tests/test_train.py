from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest
import torch

from fpac.agents import AgentConfig, make_agent
from fpac.checkpoint import load_checkpoint
from fpac.envs import EnvSpec, make_env
from fpac.harness import train as train_mod
from fpac.harness.config import parse_pairs
from fpac.harness.train import CSV_COLUMNS, NumericalError, evaluate, expected_updates, train
from fpac.sac import SACAgent, SACConfig

TINY_STATE = {"agent": "state_sac", "env": "pendulum_swingup", "total_env_steps": "2000", "eval_interval": "1000",
              "evaluation_episodes": "2", "mlp_hidden_units": "32", "batch_size": "16"}
TINY_FPAC = {"agent": "fpac", "env": "point_reacher_dense", "total_env_steps": "1200", "eval_interval": "400",
             "evaluation_episodes": "1", "mlp_hidden_units": "16", "batch_size": "8", "observation_size": "32",
             "frame_channels": "1", "encoder_channels": "4", "number_of_feature_points": "4"}


def run(pairs: dict, out, **kw):
    return train(parse_pairs({**pairs, "output_dir": str(out)}), **kw)


def test_identical_seed_identical_csv(tmp_path):
    run(TINY_FPAC, tmp_path / "a")
    run(TINY_FPAC, tmp_path / "b")
    a = (tmp_path / "a" / "progress.csv").read_bytes()
    assert a == (tmp_path / "b" / "progress.csv").read_bytes()
    rows = list(csv.reader(a.decode().splitlines()))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 4


def test_different_seed_differs(tmp_path):
    a = run({**TINY_STATE, "seed": "0"}, tmp_path / "a", write=False)
    b = run({**TINY_STATE, "seed": "1"}, tmp_path / "b", write=False)
    assert [r["critic_loss"] for r in a.rows] != [r["critic_loss"] for r in b.rows]


def test_eval_rows_and_update_count(tmp_path):
    rec = run(TINY_STATE, tmp_path)
    assert [r["env_step"] for r in rec.rows] == [1000, 2000]
    assert rec.updates == expected_updates(2000, 4, 1000) == 250
    assert rec.agent.sac.counts["critic"] == 250  # every call past warm-up had a full batch
    assert rec.agent.sac.counts["actor"] == 125
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["updates"] == 250 and meta["seed"] == 0 and "commit" in meta and meta["wall_clock_s"] > 0
    assert (tmp_path / "checkpoint.pt").exists() and (tmp_path / "config.txt").exists()


def test_expected_updates():
    assert expected_updates(1000, 4, 1000) == 0
    assert expected_updates(1004, 4, 1000) == 1
    assert expected_updates(1002, 4, 1000) == 1
    assert expected_updates(500, 4, 1000) == 0
    assert expected_updates(20, 1, 10) == 10


def test_first_eval_is_random_rows_have_no_losses(tmp_path):
    rec = run(TINY_STATE, tmp_path, write=False)
    assert math.isnan(rec.rows[0]["critic_loss"])
    assert math.isfinite(rec.rows[1]["critic_loss"])


def test_untrained_agent_far_below_trained_level(tmp_path):
    pairs = {**TINY_FPAC, "total_env_steps": "1000", "eval_interval": "1000", "evaluation_episodes": "10"}
    rec = run(pairs, tmp_path, write=False)
    assert rec.updates == 0
    # random uniform actions average about 126 over 250 steps; a trained reacher sits on the target (> 700)
    assert rec.rows[0]["return_mean"] < 400


def test_stop_predicate_ends_run_early(tmp_path):
    rec = run(TINY_STATE, tmp_path, write=False, stop=lambda row: row["env_step"] >= 1000)
    assert len(rec.rows) == 1 and rec.metadata["stopped_early"]
    assert rec.updates == 0


def test_checkpoint_reload_reproduces_eval(tmp_path):
    rec = run(TINY_STATE, tmp_path)
    agent, run_cfg = load_checkpoint(tmp_path / "checkpoint.pt")
    assert run_cfg.agent == rec.agent.cfg and run_cfg.env == rec.agent.env_spec
    assert evaluate(agent, run_cfg.env, 2, seed=1) == evaluate(rec.agent, run_cfg.env, 2, seed=1)


def test_nan_loss_aborts_with_checkpoint_and_report(tmp_path, monkeypatch):
    real = SACAgent.update_critic

    def poisoned(self, batch):
        _, feat = real(self, batch)
        return float("nan"), feat

    monkeypatch.setattr(SACAgent, "update_critic", poisoned)
    with pytest.raises(NumericalError, match="critic_loss"):
        run(TINY_STATE, tmp_path)
    assert (tmp_path / "checkpoint_nan.pt").exists()
    assert "critic_loss" in json.loads((tmp_path / "nan_report.json").read_text())["error"]


# --- evaluate -------------------------------------------------------------------------------

def state_agent(env: str, **spec_kw):
    spec = EnvSpec(env, **spec_kw)
    return make_agent(AgentConfig(kind="state_sac", sac=SACConfig(hidden_units=16, hidden_layers=1)), spec), spec


def test_reward_free_env_evaluates_to_zero():
    agent, spec = state_agent("point_reacher_dense", reward_scale=0.0)
    assert evaluate(agent, spec, 3, seed=0) == (0.0, 0.0)


def test_evaluate_repeatable():
    agent, spec = state_agent("ball_catcher")
    assert evaluate(agent, spec, 3, seed=5) == evaluate(agent, spec, 3, seed=5)


def test_zero_actor_on_pendulum_equals_hanging_baseline():
    agent, spec = state_agent("pendulum_swingup")
    with torch.no_grad():
        for p in agent.sac.actor.parameters():
            p.zero_()
    mean, std = evaluate(agent, spec, 3, seed=2)
    baseline = []
    for s in train_mod.episode_seeds(2, 3):
        env = make_env(spec)
        env.reset(s)
        baseline.append(sum(env.step([0.0]).reward for _ in range(spec.steps_per_episode)))
    assert mean == pytest.approx(np.mean(baseline), abs=1e-9)
    assert std == pytest.approx(np.std(baseline), abs=1e-9)


def test_evaluate_uses_deterministic_actions():
    agent, spec = state_agent("point_reacher_dense")
    before = agent.sac.generator.get_state().clone()
    evaluate(agent, spec, 2, seed=0)
    assert torch.equal(before, agent.sac.generator.get_state())


def test_truncation_is_not_terminal(tmp_path, monkeypatch):
    pushed = []
    real = train_mod.ReplayBuffer.push
    monkeypatch.setattr(train_mod.ReplayBuffer, "push", lambda self, t: (pushed.append(t.done), real(self, t)))
    run({**TINY_STATE, "total_env_steps": "1000", "eval_interval": "1000", "evaluation_episodes": "1"}, tmp_path,
        write=False)
    assert len(pushed) == 250 and not any(pushed)
