"""Overfit a fixed 4-scene synthetic batch with each AV fusion kind.

    python scripts/overfit.py --fusion cmaf --steps 500
"""

import argparse
import logging

from seldkit.harness import desk_config, overfit, overfit_scenes
from seldkit.model import FUSIONS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--fusion", choices=FUSIONS, action="append")
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--embed-dim", type=int, default=128)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    scenes = overfit_scenes(args.seed)
    for fusion in args.fusion or FUSIONS:
        res = overfit(desk_config(fusion, args.embed_dim), scenes, max_steps=args.steps, lr=args.lr, seed=args.seed,
                      log_fn=lambda m, f=fusion: print(f"[{f}] {m}", flush=True))
        print(f"[{fusion}] steps={res.steps} F1={res.final.F1:.3f} loss={res.losses[-1]:.5f} "
              f"seconds={res.seconds:.0f}", flush=True)


if __name__ == "__main__":
    main()
