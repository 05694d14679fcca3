"""Final forward error per residual scale, one training per (eps, seed).

    python3 scripts/epsilon_sweep.py --eps 0.1 0.01 0.001 --seeds 0 1 2
"""
import argparse

import numpy as np

from wrvi import config as cfgmod
from wrvi.evaluation import epsilon_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="linear_poisson_desk")
    p.add_argument("--eps", type=float, nargs="+")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--iterations", type=int)
    args = p.parse_args()
    cfg = cfgmod.bundled(args.config)
    eps = args.eps or cfg.evaluation.sweep_eps
    seeds = args.seeds or cfg.evaluation.sweep_seeds
    rows = epsilon_sweep(cfg, eps, seeds, iterations=args.iterations)
    for e in eps:
        vals = [r.final_mnse for r in rows if r.eps == e]
        print(f"eps_u {e:8.0e}  median forward MNSE {np.median(vals):.3e}  per seed {np.round(vals, 6).tolist()}")


if __name__ == "__main__":
    main()
