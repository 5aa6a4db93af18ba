"""The twelve acceptance criteria, one test each.

Every test prints a single ``criterion N PASS|FAIL`` line; the lines are also
repeated in the terminal summary. Training criteria (6, 7, 8, 10) take hours on
one CPU core the first time. Their per-seed evaluation rows are cached under
``.acceptance_cache/`` keyed by the run configuration *and* a digest of the
package sources, so any code change forces a fresh run. Set
``FPAC_ACCEPTANCE_FRESH=1`` to ignore the cache.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

import oracles
from fpac import featpoint, gradcheck
from fpac.agents import AgentConfig, Observation, make_agent
from fpac.encoder import Encoder, EncoderConfig
from fpac.envs import EnvSpec, make_env
from fpac.harness import config as config_mod
from fpac.harness.bench import bench_softmax
from fpac.harness.train import train
from fpac.sac import ReplayBuffer, SACConfig, Transition

ROOT = Path(__file__).resolve().parents[1]
CACHE = Path(os.environ.get("FPAC_ACCEPTANCE_CACHE", ROOT / ".acceptance_cache"))
FRESH = os.environ.get("FPAC_ACCEPTANCE_FRESH") == "1"

RESULTS: list[str] = []


def report(n: int, name: str, passed: bool, detail: str) -> None:
    line = f"criterion {n:2d} {'PASS' if passed else 'FAIL'}: {name} | {detail}"
    print(line)
    RESULTS.append(line)
    assert passed, line


# --- cached training ---------------------------------------------------------------------------

def source_digest() -> str:
    h = hashlib.sha256()
    for path in sorted((ROOT / "src" / "fpac").rglob("*")):
        if path.suffix in (".py", ".pyx"):
            h.update(str(path.relative_to(ROOT)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()[:16]


def run_rows(pairs: dict, tag: str = "", stop=None) -> list[dict]:
    """Evaluation rows of one training run, from the cache when the config and sources match."""
    cfg = config_mod.parse_pairs({**pairs, "output_dir": "unused"})
    text = config_mod.serialize(cfg) + tag
    key = hashlib.sha256((text + source_digest()).encode()).hexdigest()[:20]
    path = CACHE / f"{cfg.agent.kind}-{cfg.env.name}-s{cfg.seed}-{key}.json"
    if path.exists() and not FRESH:
        return json.loads(path.read_text())["rows"]
    t0 = time.perf_counter()
    rec = train(cfg, write=False, stop=stop)
    CACHE.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"config": text, "rows": rec.rows, "seconds": time.perf_counter() - t0}, indent=1))
    return rec.rows


def final_returns(pairs: dict, seeds) -> np.ndarray:
    return np.array([run_rows({**pairs, "seed": str(s)})[-1]["return_mean"] for s in seeds])


# Toy-scale reacher settings shared by criteria 7, 8 and 10: 32x32 grayscale frames, a narrower trunk and
# heads, and the 1e-3 learning rate customary for reaching tasks. Identical for every agent kind.
REACHER = {
    "env": "point_reacher_dense", "total_env_steps": "60000", "eval_interval": "10000",
    "observation_size": "32", "frame_channels": "1", "encoder_channels": "16",
    "mlp_hidden_units": "256", "batch_size": "64", "learning_rate": "0.001",
}
SEEDS = range(5)


# --- 1. bottleneck math ------------------------------------------------------------------------

def test_c01_bottleneck_math_oracle():
    m = torch.zeros(1, 3, 3, dtype=torch.float64)
    m[0, :, 2] = math.log(2.0)
    errs = []
    for mode in featpoint.MODES:
        for beta in (1.0, 0.5):
            x = featpoint.extract(m, featpoint.ExtractorConfig(mode=mode, temperature=beta))[0, 0].item()
            errs.append(abs(x - oracles.column_example(beta)))
    g = np.random.default_rng(0)
    worst = 0.0
    for i in range(100):
        h, w = g.integers(2, 12, size=2)
        line = g.normal(size=w if i % 2 == 0 else h) * 3
        maps = np.broadcast_to(line, (3, h, w)) if i % 2 == 0 else np.broadcast_to(line[:, None], (3, h, w))
        t = torch.from_numpy(np.ascontiguousarray(maps))
        beta = float(g.choice([0.5, 1.0]))
        sep = featpoint.extract(t, featpoint.ExtractorConfig(mode="separable", temperature=beta))
        full = featpoint.extract(t, featpoint.ExtractorConfig(mode="full2d", temperature=beta))
        ref = oracles.expected_coords(maps, beta)
        worst = max(worst, (sep - full).abs().max().item(), np.abs(full[:, :2].numpy() - ref).max())
    report(1, "bottleneck math oracle", max(errs) <= 1e-9 and worst <= 1e-6,
           f"column example err {max(errs):.1e} (<=1e-9), axis-constant max diff {worst:.1e} (<=1e-6)")


# --- 2. gradients ------------------------------------------------------------------------------

def test_c02_gradient_correctness():
    t0 = time.perf_counter()
    g = torch.Generator().manual_seed(0)
    worst = 0.0
    for _ in range(20):
        maps = torch.randn(4, 8, 8, dtype=torch.float64, generator=g) * 2
        for beta in (0.5, 1.0):
            for mode in featpoint.MODES:
                cfg = featpoint.ExtractorConfig(mode=mode, temperature=beta)
                worst = max(worst, gradcheck.check(lambda x: featpoint.extract(x, cfg), maps, eps=1e-4))
    enc_cfg = EncoderConfig(input_size=(1, 16, 16), conv_layers=2, channels_per_layer=4, strides=(2, 1),
                            projection_channels=3)
    enc = Encoder(enc_cfg, seed=0).double()
    frame = torch.rand(1, 16, 16, dtype=torch.float64, generator=g)
    enc_in = gradcheck.check(lambda f: enc(f), frame, eps=1e-4)
    enc_par = gradcheck.check_parameters(lambda: enc(frame).sum(), list(enc.parameters()), eps=1e-4)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-3 and enc_in < 1e-3 and enc_par < 1e-3 and elapsed < 60
    report(2, "gradient correctness", ok, f"extract {worst:.1e}, encoder input {enc_in:.1e}, "
           f"encoder params {enc_par:.1e} (all <1e-3), {elapsed:.1f}s (<60s)")


# --- 3. shapes -------------------------------------------------------------------------------

def test_c03_shape_contract():
    enc = Encoder(EncoderConfig())
    out = enc(torch.rand(3, 84, 84))
    trunk = Encoder(EncoderConfig(projection_channels=None))(torch.rand(3, 84, 84))
    ok = tuple(out.shape) == (32, 35, 35) and tuple(trunk.shape) == (32, 35, 35)
    report(3, "shape contract", ok, f"3x84x84 -> {tuple(out.shape)} (K=32), trunk {tuple(trunk.shape)}")


# --- 4. separable speedup ----------------------------------------------------------------------

def test_c04_separable_speedup():
    t0 = time.perf_counter()
    res = bench_softmax((128, 32, 35, 35), iters=1000, warmup=100)
    elapsed = time.perf_counter() - t0
    ok = res.ratio >= 1.3 and elapsed < 120
    report(4, "separable softmax speedup", ok, f"full2d {res.full2d_ms:.2f} ms, separable {res.separable_ms:.2f} ms, "
           f"ratio {res.ratio:.2f}x (>=1.3), {elapsed:.0f}s (<120s)")


# --- 5. gradient routing -----------------------------------------------------------------------

def test_c05_gradient_routing():
    spec = EnvSpec("point_reacher_dense", frame=(1, 32, 32))
    agent = make_agent(AgentConfig(kind="fpac", encoder=EncoderConfig(channels_per_layer=8),
                                   sac=SACConfig(batch_size=16, hidden_units=64)), spec)
    env = make_env(spec)
    frame, _ = env.reset(0)
    buf = ReplayBuffer(100, seed=0)
    rng = np.random.default_rng(0)
    cur = Observation(frame, env.true_keypoints(), env.state_vector())
    prev = None
    for _ in range(32):
        a = rng.uniform(-1, 1, 2)
        res = env.step(a)
        nxt = Observation(res.frame, env.true_keypoints(), env.state_vector())
        buf.push(Transition(agent.payload(cur, prev), a, res.reward + 1.0, agent.payload(nxt, cur), False))
        cur, prev = nxt, cur
    batch = agent.sac.to_batch(buf.sample(16))
    enc0 = [p.clone() for p in agent.encoder_parameters()]
    actor0 = [p.clone() for p in agent.sac.actor.parameters()]
    agent.sac.update_actor_and_alpha(agent.sac.features(batch["obs"]))
    actor_only_same = all(torch.equal(a, b) for a, b in zip(enc0, agent.encoder_parameters()))
    actor_moved = any(not torch.equal(a, b) for a, b in zip(actor0, agent.sac.actor.parameters()))
    td_loss, _ = agent.sac.update_critic(batch)
    changed = sum(not torch.equal(a, b) for a, b in zip(enc0, agent.encoder_parameters()))
    ok = actor_only_same and actor_moved and changed > 0 and td_loss > 0
    report(5, "gradient routing", ok, f"actor-only update: encoder bit-identical={actor_only_same}; critic update "
           f"(loss {td_loss:.3g}) changed {changed}/{len(enc0)} encoder tensors")


# --- 6. SAC from state -------------------------------------------------------------------------

# frames are rendered but unused by state_sac, so keep them small
PENDULUM = {"agent": "state_sac", "env": "pendulum_swingup", "total_env_steps": "50000", "eval_interval": "5000",
            "mlp_hidden_units": "256", "observation_size": "32", "frame_channels": "1"}


@pytest.mark.slow
def test_c06_sac_state_pendulum():
    # maximum achievable return: swing-up search over the start-angle range (hanging +- 0.1 rad)
    best = max(oracles.pendulum_best_return(math.pi + d, seed=i) for i, d in enumerate((-0.1, 0.0, 0.1)))
    finals = final_returns(PENDULUM, range(4))
    passed = int((finals >= 0.8 * best).sum())
    report(6, "SAC core sanity (state_sac, pendulum_swingup, 50k steps)", passed >= 3,
           f"oracle max {best:.1f}, threshold {0.8 * best:.1f}, finals {np.round(finals, 1).tolist()}, "
           f"{passed}/4 seeds pass (>=3)")


# --- 7. bottleneck benefit ---------------------------------------------------------------------

def reacher_finals(kind: str, **extra) -> np.ndarray:
    return final_returns({**REACHER, "agent": kind, **{k: str(v) for k, v in extra.items()}}, SEEDS)


@pytest.mark.slow
def test_c07_bottleneck_benefit_ordering():
    kp, fp, px = reacher_finals("keypoint_sac"), reacher_finals("fpac"), reacher_finals("pixel_sac")
    margin = oracles.pooled_std(fp, px)
    ok = kp.mean() >= fp.mean() > px.mean() and fp.mean() - px.mean() > margin
    report(7, "keypoint_sac >= fpac > pixel_sac (point_reacher_dense, 60k)", ok,
           f"keypoint {kp.mean():.1f}+-{kp.std(ddof=1):.1f}, fpac {fp.mean():.1f}+-{fp.std(ddof=1):.1f}, "
           f"pixel {px.mean():.1f}+-{px.std(ddof=1):.1f}; fpac-pixel {fp.mean() - px.mean():.1f} vs pooled std "
           f"{margin:.1f}")


# --- 8. sparse reward ------------------------------------------------------------------------

SPARSE = {**REACHER, "env": "point_reacher_sparse", "agent": "fpac", "total_env_steps": "100000",
          "eval_interval": "5000"}


@pytest.mark.slow
def test_c08_sparse_reward():
    hits = []
    for s in SEEDS:
        # stops at the first evaluation with a nonzero mean return
        rows = run_rows({**SPARSE, "seed": str(s)}, tag="stop:first-nonzero",
                        stop=lambda row: row["return_mean"] > 0)
        hit = next((r["env_step"] for r in rows if r["return_mean"] > 0), None)
        hits.append(hit)
    n = sum(h is not None for h in hits)
    report(8, "fpac nonzero return on point_reacher_sparse within 100k", n >= 3,
           f"first nonzero eval step per seed {hits}; {n}/5 seeds (>=3)")


# --- 9. camera compensation ---------------------------------------------------------------------

def test_c09_camera_compensation():
    env = make_env(EnvSpec("scroll_runner", frame=(1, 48, 48)))
    env.reset(0)
    h, w = env.frame_hw
    cam = env.camera()
    half_w, _ = cam.half_extent(h, w)
    absolute = featpoint.ExtractorConfig(relative=False)
    rendered = featpoint.ExtractorConfig(mode="full2d", temperature=0.05, use_scalar_feature=False)
    comp, ratio = [], []
    for pixels in (0.5, 1, 1.7, 3):  # camera pan per step, including sub-pixel shifts
        delta = pixels * 2.0 / (w - 1)
        prev_kp = prev_fr = None
        for i in range(8):
            c = cam.shifted(i * delta * half_w)
            kp = env.true_keypoints(camera=c)
            fr = featpoint.extract(torch.from_numpy(env.render(camera=c)).double(), rendered)
            if prev_kp is not None:
                for cur_pts, prev_pts in ((kp, prev_kp), (fr, prev_fr)):
                    k = len(cur_pts) * 3
                    on = featpoint.build_state(cur_pts, prev_pts, (delta, 0.0), absolute)[k:].view(-1, 3)[:, :2]
                    off = featpoint.build_state(cur_pts, prev_pts, None, absolute)[k:].view(-1, 3)
                    comp.append(on.abs().mean().item())
                    ratio.extend((off[:, 0].abs() / delta).tolist())
            prev_kp, prev_fr = kp, fr
    comp_mean, ratio = float(np.mean(comp)), np.array(ratio)
    ok = comp_mean < 0.02 and np.all(np.abs(ratio - 1) <= 0.2)
    report(9, "camera compensation (scroll_runner, static agent, panning camera)", ok,
           f"compensated mean |v| {comp_mean:.4f} (<0.02); uncompensated |dx|/camera delta in "
           f"[{ratio.min():.3f}, {ratio.max():.3f}] (within 20%)")


# --- 10. number of feature points ---------------------------------------------------------------

@pytest.mark.slow
def test_c10_feature_point_count():
    px = reacher_finals("pixel_sac")
    lines, ok = [], True
    for k in (8, 32):
        fp = reacher_finals("fpac", number_of_feature_points=k)
        margin = oracles.pooled_std(fp, px)
        ok &= bool(fp.mean() > px.mean() and fp.mean() - px.mean() > margin)
        lines.append(f"K={k}: {fp.mean():.1f} (pixel {px.mean():.1f} + pooled std {margin:.1f})")
    report(10, "fpac robust to K (8 and 32 pass the fpac threshold)", ok, "; ".join(lines))


# --- 11. replay buffer ------------------------------------------------------------------------

def test_c11_replay_buffer():
    buf = ReplayBuffer(100, seed=1)
    for i in range(250):
        buf.push(Transition(np.array([i], dtype=np.float32), np.zeros(1), float(i), np.zeros(1), False))
    held = buf.get(buf.indices_oldest_first())["reward"].tolist()
    fifo = held == list(map(float, range(150, 250)))
    n = 100_000
    counts = np.bincount(buf.sample_indices(n), minlength=100)
    sigma = math.sqrt(n * 0.01 * 0.99)
    dev = np.abs(counts - n * 0.01).max() / sigma
    report(11, "replay buffer", fifo and dev < 4, f"FIFO exact={fifo}; max frequency deviation {dev:.2f} sigma (<4)")


# --- 12. determinism --------------------------------------------------------------------------

def test_c12_determinism(tmp_path):
    pairs = {"agent": "fpac", "env": "point_reacher_dense", "total_env_steps": "2000", "eval_interval": "500",
             "evaluation_episodes": "2", "observation_size": "32", "frame_channels": "1", "encoder_channels": "8",
             "mlp_hidden_units": "32", "batch_size": "16", "seed": "7"}
    files = []
    for name in ("a", "b"):
        train(config_mod.parse_pairs({**pairs, "output_dir": str(tmp_path / name)}))
        files.append((tmp_path / name / "progress.csv").read_bytes())
    digest = hashlib.sha256(files[0]).hexdigest()[:12]
    report(12, "determinism", files[0] == files[1] and files[0].count(b"\n") == 5,
           f"two runs, byte-identical CSV: {files[0] == files[1]} (sha256 {digest})")
