"""Train a bundled (or file) config and evaluate both maps against the oracle.

    python3 scripts/train_eval.py nonlinear_poisson_desk --seed 0 --out runs/nl
"""
import argparse
import json
import time
from pathlib import Path

from wrvi import config as cfgmod
from wrvi.checkpoint import save_checkpoint
from wrvi.evaluation import forward_inverse_eval
from wrvi.experiment import train_experiment


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config", help="bundled config name or JSON path")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--n-draws", type=int)
    p.add_argument("--out", help="directory for checkpoint and report")
    args = p.parse_args()

    path = Path(args.config)
    cfg = cfgmod.load(path) if path.exists() else cfgmod.bundled(args.config)
    if args.iterations is not None:
        cfg.training.iterations = args.iterations

    def log(rec):
        print(f"iter {rec.iteration:>7}  elbo {rec.elbo:14.4f}  residual {rec.residual_term:14.4f}  lr {rec.lr:.2e}",
              flush=True)

    t0 = time.perf_counter()
    state, spec, _ = train_experiment(cfg, seed=args.seed, on_log=log)
    print(f"trained {state.iteration} iterations in {time.perf_counter() - t0:.1f} s ({state.skipped} skipped)")
    n = cfg.evaluation.n_draws if args.n_draws is None else args.n_draws
    report = forward_inverse_eval(state, spec, n, cfg.evaluation.seed)
    print(json.dumps(report.metrics, indent=2, sort_keys=True))
    print(json.dumps(report.timings, indent=2, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "checkpoint.json", state, cfgmod.to_dict(cfg))
        (out / "metrics.json").write_text(json.dumps(report.metrics, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
