"""Time the separable and full 2D coordinate kernels on every available backend.

    python3 benchmarks/bench_kernels.py --iters 200
    python3 benchmarks/bench_kernels.py --shape 32x16x17x17 --backward

Prints one line per backend plus a cross-backend table of the separable
kernel, so the Cython path can be compared against torch and numpy directly.
"""

from __future__ import annotations

import argparse
import json

from fpac import kernels
from fpac.harness.bench import available_backends, bench_softmax


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--shape", default="128x32x35x35")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--warmup", type=int, default=20)
    p.add_argument("--backward", action="store_true", help="torch only: time forward + backward")
    p.add_argument("--json", help="write all results to this file")
    args = p.parse_args()

    shape = tuple(int(s) for s in args.shape.split("x"))
    backends = ["torch"] if args.backward else available_backends()
    print(f"native kernels: {'built' if kernels.HAVE_NATIVE else 'not built (numpy fallback)'}")
    results = [bench_softmax(shape, args.iters, args.warmup, backend=b, backward=args.backward) for b in backends]
    for r in results:
        print(r.summary())
    base = results[0].separable_ms
    print(f"\n{'backend':8s} {'separable ms':>13s} {'vs torch':>9s}")
    for r in results:
        print(f"{r.backend:8s} {r.separable_ms:13.3f} {base / r.separable_ms:8.2f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump([r.as_dict() for r in results], f, indent=2)


if __name__ == "__main__":
    main()
