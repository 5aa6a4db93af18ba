"""Keypoint overlays: roll out a policy and draw its feature points on each frame.

Each emitted frame becomes ``ep{N}_step{M}.png`` with a JSON sidecar listing
the point coordinates and the marker pixel positions. With ``prob_maps=True``
fpac checkpoints also dump per-channel 2D softmax maps (``.npy`` plus a tiled
grayscale ``.png``).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from fpac import featpoint
from fpac.agents import Agent, frames_to_float, to_uint8
from fpac.checkpoint import load_checkpoint
from fpac.envs import EnvSpec, coords_to_pixels, make_env
from fpac.harness.train import episode_seeds, observation

KEYPOINT_KINDS = ("fpac", "keypoint_sac")
_PALETTE = [(230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48), (145, 30, 180),
            (70, 240, 240), (240, 50, 230)]


class VizError(ValueError):
    pass


def frame_points(agent: Agent, cur, prev) -> np.ndarray:
    """``(K, 3)`` points the agent sees for the current frame."""
    if agent.kind == "keypoint_sac":
        return np.asarray(cur.keypoints, dtype=np.float64)
    frames = torch.as_tensor(agent.payload(cur, prev))[None]
    with torch.no_grad():
        return agent.sac.features.points(frames)[0, 0].double().numpy()


def probability_maps(agent: Agent, frame: np.ndarray) -> np.ndarray:
    """Per-channel 2D softmax of the encoder maps for one frame, ``(K, h, w)``."""
    x = frames_to_float(torch.as_tensor(to_uint8(frame)))  # exactly what the agent sees
    with torch.no_grad():
        maps = agent.encoder(x).double()
    return featpoint.spatial_softmax_2d(maps, agent.cfg.extractor.temperature).numpy()


def load_prob_maps(path, atol: float = 1e-4) -> np.ndarray:
    """Load a probability-map dump and check every channel sums to 1."""
    p = np.load(path)
    sums = p.reshape(p.shape[0], -1).sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=atol, rtol=0.0) or (p < 0).any():
        raise VizError(f"{path}: probability maps do not sum to 1 (worst {np.abs(sums - 1).max():.3g})")
    return p


def overlay(frame: np.ndarray, points: np.ndarray, upscale: int = 4) -> tuple[Image.Image, np.ndarray]:
    """Draw one marker per point; returns the image and marker centres in frame pixels."""
    c, h, w = frame.shape
    rgb = np.repeat(frame, 3, axis=0) if c == 1 else frame[:3]
    img = Image.fromarray(np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0))
    img = img.resize((w * upscale, h * upscale), Image.NEAREST)
    pix = coords_to_pixels(points[:, :2], h, w)
    draw = ImageDraw.Draw(img)
    r = max(2, upscale)
    for k, (col, row) in enumerate(pix):
        # pixel centre (col, row) sits at (col + 0.5) * upscale in the enlarged image
        cx, cy = (col + 0.5) * upscale, (row + 0.5) * upscale
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], outline=_PALETTE[k % len(_PALETTE)], width=1)
    return img, pix


def _tile(prob: np.ndarray) -> Image.Image:
    k, h, w = prob.shape
    cols = int(np.ceil(np.sqrt(k)))
    rows = int(np.ceil(k / cols))
    sheet = np.zeros((rows * (h + 1), cols * (w + 1)))
    for i, p in enumerate(prob):
        r, c = divmod(i, cols)
        sheet[r * (h + 1):r * (h + 1) + h, c * (w + 1):c * (w + 1) + w] = p / max(p.max(), 1e-12)
    return Image.fromarray(np.round(sheet * 255).astype(np.uint8))


def viz(checkpoint, env: EnvSpec | str | None = None, episodes: int = 1, output_dir="viz", max_steps: int | None = None,
        prob_maps: bool = False, seed: int = 0, upscale: int = 4) -> list[Path]:
    """Write overlay images for ``episodes`` deterministic rollouts; returns the image paths."""
    agent, run = load_checkpoint(checkpoint)
    if agent.kind not in KEYPOINT_KINDS:
        raise VizError(f"viz needs a keypoint agent ({' or '.join(KEYPOINT_KINDS)}); checkpoint holds {agent.kind!r}")
    if prob_maps and agent.kind != "fpac":
        raise VizError("probability maps exist only for fpac checkpoints")
    spec = run.env if env is None else env
    if isinstance(spec, str):
        spec = EnvSpec(spec, frame=run.env.frame)
    mismatch = spec.frame != run.env.frame or spec.action_dim != run.env.action_dim
    if mismatch or (agent.kind == "keypoint_sac" and spec.num_objects != run.env.num_objects):
        raise VizError(f"environment {spec.name} {spec.frame} does not match the checkpoint ({run.env.name})")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    steps = spec.steps_per_episode if max_steps is None else min(max_steps, spec.steps_per_episode)
    written = []
    for ep, ep_seed in enumerate(episode_seeds(seed, episodes)):
        e = make_env(spec)
        frame, _ = e.reset(ep_seed)
        cur, prev = observation(e, frame), None
        for t in range(steps):
            pts = frame_points(agent, cur, prev)
            stem = out / f"ep{ep}_step{t}"
            img, pix = overlay(cur.frame, pts, upscale)
            img.save(stem.with_suffix(".png"))
            meta = {"points": pts.tolist(), "marker_pixels": pix.tolist(), "upscale": upscale}
            if prob_maps:
                prob = probability_maps(agent, cur.frame)
                np.save(f"{stem}_prob.npy", prob)
                _tile(prob).save(f"{stem}_prob.png")
            stem.with_suffix(".json").write_text(json.dumps(meta), encoding="utf-8")
            written.append(stem.with_suffix(".png"))
            delta = np.zeros(2) if prev is None else cur.camera_delta
            action = agent.act(agent.payload(cur, prev), delta, deterministic=True)
            res = e.step(action)
            prev, cur = cur, observation(e, res.frame, res.camera_delta)
    return written
