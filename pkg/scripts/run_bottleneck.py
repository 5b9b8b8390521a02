#!/usr/bin/env python3
"""Capacity-ceiling experiment: train fusion networks of increasing size on
data whose label depends only on latent coordinates the frozen embedding
destroys, plus a control where the label survives the projection.

Example:
    python3 scripts/run_bottleneck.py --n 6000 --d 32
"""

import argparse
import json

from frevl.store import SyntheticSpec
from frevl.training import bottleneck_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=6000)
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--hidden-dim", type=int, default=8,
                    help="destroyed latent dimensions carrying the label")
    ap.add_argument("--epochs", type=int, default=2)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--data-seed", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--sweep", default="8:1,16:1,32:2",
                    help="comma list of d_h:n_layers capacities")
    args = ap.parse_args()

    sweep = [tuple(int(x) for x in item.split(":"))
             for item in args.sweep.split(",")]
    spec = SyntheticSpec(task="bottleneck", n_samples=args.n, d_v=args.d,
                         d_t=args.d, seed=args.data_seed,
                         bottleneck_hidden_dim=args.hidden_dim)
    report = bottleneck_experiment(spec, sweep, epochs=args.epochs,
                                   batch_size=args.batch, seed=args.seed)
    print(json.dumps(report, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
