#!/usr/bin/env python3
"""Run every named ablation axis against the default configuration on
synthetic matching data and print the accuracy deltas.

Example:
    python3 scripts/run_ablation_suite.py --n 2000 --epochs 2
"""

import argparse

from frevl.losses import TaskKind
from frevl.model import FusionConfig
from frevl.optim import ScheduleConfig
from frevl.store import SyntheticSpec, generate_synthetic
from frevl.training import (
    ABLATION_AXES,
    TrainConfig,
    ablation_run,
    split_by_id_hash,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--epochs", type=int, default=2)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--peak-lr", type=float, default=3e-3)
    ap.add_argument("--data-seed", type=int, default=11)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--axes", nargs="*", default=None,
                    help="subset of axes (default: all)")
    args = ap.parse_args()

    records = generate_synthetic(SyntheticSpec(
        task="matching", n_samples=args.n, d_v=args.d, d_t=args.d,
        seed=args.data_seed, match_noise=0.15))
    train_recs, val_recs = split_by_id_hash(records)

    fusion = FusionConfig(d_v=args.d, d_t=args.d, d_h=args.d, n_layers=2,
                          heads=8, ffn_dim=4 * args.d, dropout_p=0.1,
                          out_dim=2, head_hidden=4 * args.d)
    # leave schedule headroom for deeper Bi-attention variants (same steps)
    steps = (len(train_recs) // args.batch) * args.epochs
    base = TrainConfig(
        task=TaskKind("classification", 2), fusion=fusion,
        schedule=ScheduleConfig(peak_lr=args.peak_lr,
                                warmup_steps=max(1, steps // 10),
                                total_steps=steps),
        batch_size=args.batch, epochs=args.epochs, seed=args.seed)

    axes = args.axes if args.axes else sorted(ABLATION_AXES)
    print(f"{'axis':<24} {'default':>8} {'variant':>8} {'delta':>8}")
    for axis in axes:
        r = ablation_run(base, axis, train_recs, val_recs)
        print(f"{axis:<24} {r['default']['accuracy']:>8.4f} "
              f"{r['variant']['accuracy']:>8.4f} "
              f"{r['delta_accuracy']:>+8.4f}")


if __name__ == "__main__":
    main()
