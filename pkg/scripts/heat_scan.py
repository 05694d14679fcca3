"""Train the heat collocation model and print the residual and stdev scan over (gamma, kappa).

    python3 scripts/heat_scan.py --iterations 50000
"""
import argparse

import numpy as np

from wrvi import config as cfgmod
from wrvi.evaluation import box_contrast, forward_inverse_eval, residual_grid_scan
from wrvi.experiment import train_experiment


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="heat_desk")
    p.add_argument("--iterations", type=int)
    args = p.parse_args()
    cfg = cfgmod.bundled(args.config)
    if args.iterations is not None:
        cfg.training.iterations = args.iterations
    state, spec, _ = train_experiment(cfg)
    print(forward_inverse_eval(state, spec, cfg.evaluation.n_draws, cfg.evaluation.seed).metrics)
    ev = cfg.evaluation
    res, std = residual_grid_scan(state, spec, ev.scan_gamma, ev.scan_kappa)
    np.set_printoptions(precision=2, suppress=True)
    print("log10 mean squared residual (rows gamma, columns kappa)")
    print(res)
    print("log10 mean stdev")
    print(std)
    inside, outside = box_contrast(res, ev.scan_gamma, ev.scan_kappa)
    print(f"inside box {inside:.2f}  outside box {outside:.2f}")


if __name__ == "__main__":
    main()
