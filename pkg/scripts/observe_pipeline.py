"""Pretrain the emulator, fit the observation encoder and score reconstruction and inference.

    python3 scripts/observe_pipeline.py --config observe
"""
import argparse
import json

from wrvi import config as cfgmod
from wrvi.experiment import train_experiment
from wrvi.observe import observe_experiment


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="observe")
    p.add_argument("--pretrain-iterations", type=int)
    p.add_argument("--encoder-iterations", type=int)
    args = p.parse_args()
    cfg = cfgmod.bundled(args.config)
    if args.pretrain_iterations is not None:
        cfg.training.iterations = args.pretrain_iterations
    if args.encoder_iterations is not None:
        cfg.observation.iterations = args.encoder_iterations
    state, spec, _ = train_experiment(cfg, with_phi=True)
    out = observe_experiment(cfg, state, spec)
    print(json.dumps({"train": out["train"], "holdout": out["holdout"]}, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
