"""Synthesize a small dataset, train a reduced AV model for a few epochs, and score it.

    python scripts/demo.py --out runs/demo --fusion cmaf --epochs 3
"""

import argparse
from pathlib import Path

import numpy as np

from seldkit.config import DataConfig, OptimConfig, RunConfig, RunSection
from seldkit.harness import train
from seldkit.model import FUSIONS, ModelConfig
from seldkit.synth import generate_scene, random_scenario, write_scene


def make_split(directory: Path, count: int, seed: int, duration: float):
    rng = np.random.default_rng(seed)
    for i in range(count):
        spec = random_scenario(rng, duration=duration, n_events=2, max_rate=10.0)
        write_scene(directory, f"scene{i:04d}", generate_scene(spec))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/demo")
    ap.add_argument("--fusion", choices=FUSIONS, default="cmaf")
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--train-scenes", type=int, default=6)
    ap.add_argument("--test-scenes", type=int, default=2)
    ap.add_argument("--embed-dim", type=int, default=64)
    args = ap.parse_args()
    out = Path(args.out)
    make_split(out / "train", args.train_scenes, seed=1, duration=5.0)
    make_split(out / "test", args.test_scenes, seed=2, duration=6.0)
    cfg = RunConfig(
        data=DataConfig(train_dir=str(out / "train"), test_dir=str(out / "test")),
        model=ModelConfig(fusion=args.fusion, embed_dim=args.embed_dim, encoder_layers=2, fusion_layers=2),
        optim=OptimConfig(base_lr=1e-3, batch_size=8, epochs=args.epochs),
        run=RunSection(seed=0, output_dir=str(out / "run")),
    )
    report = train(cfg, log_fn=print)
    print(report.summary())


if __name__ == "__main__":
    main()
