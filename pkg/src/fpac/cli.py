"""Command line entry point: ``fpac {train,eval,bench,viz,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure (NaN loss).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
from pathlib import Path

from fpac.encoder import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_NAN = 0, 2, 3

log = logging.getLogger("fpac")


def _run_config(args):
    from fpac.harness import config as config_mod

    overrides = config_mod.parse_overrides(args.overrides)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    if args.config:
        return config_mod.parse_config(args.config, overrides)
    return config_mod.parse_pairs(overrides)


def cmd_train(args) -> int:
    from fpac.harness.train import train

    cfg = _run_config(args)
    rec = train(cfg, write=True, progress=True)
    print(f"final return {rec.final_return:.2f} after {cfg.total_env_steps} env steps; output in {cfg.output_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from fpac.checkpoint import load_checkpoint
    from fpac.envs import EnvSpec
    from fpac.harness.train import evaluate

    agent, run = load_checkpoint(args.checkpoint)
    try:
        spec = run.env if args.env is None else EnvSpec(args.env, frame=run.env.frame)
    except ValueError as exc:
        raise ConfigError(f"env: {exc}") from None
    if spec.action_dim != run.env.action_dim:
        raise ConfigError(f"env: {spec.name} does not match the checkpoint's action space ({run.env.name})")
    mean, std = evaluate(agent, spec, args.episodes, seed=args.seed or 0)
    print(json.dumps({"env": spec.name, "episodes": args.episodes, "return_mean": mean, "return_std": std}))
    return EXIT_OK


def cmd_bench(args) -> int:
    from fpac.harness.bench import available_backends, bench_softmax

    try:
        shape = tuple(int(s) for s in args.shape.split("x"))
    except ValueError:
        shape = ()
    if len(shape) != 4:
        raise ConfigError(f"shape: expected BxKxHxW, got {args.shape!r}")
    backends = available_backends() if args.backend == "all" else [args.backend]
    results = []
    for b in backends:
        try:
            res = bench_softmax(shape, args.iters, args.warmup, backend=b, backward=args.backward)
        except (ValueError, RuntimeError) as exc:
            raise ConfigError(str(exc)) from None
        print(res.summary())
        results.append(res.as_dict())
    if args.json:
        Path(args.json).write_text(json.dumps(results, indent=2), encoding="utf-8")
    return EXIT_OK


def cmd_viz(args) -> int:
    from fpac.harness.viz import VizError, viz

    try:
        paths = viz(args.checkpoint, args.env, args.episodes, args.out or "viz", max_steps=args.steps,
                    prob_maps=args.prob_maps, seed=args.seed or 0)
    except VizError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {len(paths)} frames to {args.out or 'viz'}")
    return EXIT_OK


def aggregate(rows_per_seed: list[list[dict]]) -> list[dict]:
    """Mean/std of ``return_mean`` across seeds at each shared eval step."""
    steps = sorted(set.intersection(*(set(r["env_step"] for r in rows) for rows in rows_per_seed)))
    out = []
    for step in steps:
        vals = [next(r["return_mean"] for r in rows if r["env_step"] == step) for rows in rows_per_seed]
        out.append({"env_step": step, "seeds": len(vals), "return_mean": statistics.fmean(vals),
                    "return_std": statistics.pstdev(vals)})
    return out


def cmd_sweep(args) -> int:
    from fpac.harness import config as config_mod
    from fpac.harness.train import train

    base = _run_config(args)
    root = Path(args.out or base.output_dir)
    runs = []
    for s in range(args.seeds):
        seed = base.seed + s
        cfg = config_mod.parse_pairs({"seed": str(seed), "output_dir": str(root / f"seed{seed}")}, base)
        log.info("seed %d -> %s", seed, cfg.output_dir)
        runs.append(train(cfg, write=True, progress=True).rows)
    agg = aggregate(runs)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "aggregate.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, ["env_step", "seeds", "return_mean", "return_std"], lineterminator="\n")
        w.writeheader()
        w.writerows(agg)
    if agg:
        print(f"final {agg[-1]['return_mean']:.2f} +- {agg[-1]['return_std']:.2f} over {args.seeds} seeds")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpac", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("overrides", nargs="*", metavar="key=value")

    sp = sub.add_parser("train", help="train one agent")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="train several seeds sequentially and aggregate")
    common(sp)
    sp.add_argument("--seeds", type=int, default=5)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("--env")
    sp.add_argument("--episodes", type=int, default=10)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="separable vs full 2D softmax timing")
    sp.add_argument("--shape", default="128x32x35x35")
    sp.add_argument("--iters", type=int, default=1000)
    sp.add_argument("--warmup", type=int, default=100)
    sp.add_argument("--backend", default="torch", choices=["torch", "native", "numpy", "all"])
    sp.add_argument("--backward", action="store_true", help="time forward + backward (torch only)")
    sp.add_argument("--json", help="also write results to this file")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("viz", help="draw feature points over rollout frames")
    sp.add_argument("checkpoint")
    sp.add_argument("--env")
    sp.add_argument("--episodes", type=int, default=1)
    sp.add_argument("--steps", type=int, help="frames per episode (default: full episode)")
    sp.add_argument("--prob-maps", action="store_true")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_viz)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    from fpac.harness.train import NumericalError

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NAN


if __name__ == "__main__":
    sys.exit(main())
