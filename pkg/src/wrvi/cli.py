"""Command-line entry point: ``wrvi <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import config as cfgmod
from .basis import lstsq_coefficients
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint, spec_hash
from .evaluation import (
    box_contrast,
    epsilon_sweep,
    forward_inverse_eval,
    predict_forward,
    predict_inverse,
    residual_grid_scan,
)
from .experiment import build_problem, init_heads, init_state, observation_operator
from .observe import infer_parameters, reconstruct, synthesize_observations, train_encoder
from .pde import OracleError
from .train import TrainConfig, solver_free_objective, train_loop

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
TRACE_HEADER = ["iter", "elbo", "residual_term", "lr", "wall_ms"]
SAMPLES_HEADER = ["draw", "block", "coord", "truth", "mean", "stdev", "sq_err"]


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.17g}"


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def read_rows(path) -> np.ndarray:
    """Numeric CSV rows; a non-numeric first line is treated as a header."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if i == 0:
                    continue
                raise ValueError(f"{path}: row {i} is not numeric") from None
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise ValueError(f"{path}: rows have differing lengths {sorted(widths)}")
    return np.array(rows, dtype=float) if rows else np.zeros((0, 0))


def threads() -> int:
    raw = os.environ.get("WRVI_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise cfgmod.ConfigError("WRVI_THREADS", f"expected a positive integer, got {raw!r}") from None
    if n < 1:
        raise cfgmod.ConfigError("WRVI_THREADS", "must be >= 1")
    return n


def _load_config(args) -> cfgmod.ExperimentConfig:
    if args.config is None:
        raise cfgmod.ConfigError("--config", "a config path or bundled name is required")
    path = Path(args.config)
    cfg = cfgmod.load(path) if path.exists() else cfgmod.bundled(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.training.seed = args.seed
    if getattr(args, "out_dir", None):
        cfg.paths.out_dir = args.out_dir
    return cfg


def _config_from_checkpoint(manifest) -> cfgmod.ExperimentConfig:
    return cfgmod.from_dict(cfgmod.ExperimentConfig, manifest["config"])


def _out_dir(args, cfg) -> Path:
    return Path(args.out_dir or cfg.paths.out_dir)


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    cfg = _load_config(args)
    spec = build_problem(cfg.problem)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Path(args.checkpoint) if args.checkpoint else (Path(cfg.paths.checkpoint) if cfg.paths.checkpoint else out / "checkpoint.json")
    cfg_dict = cfgmod.to_dict(cfg)
    phash = spec_hash(cfg_dict["problem"])
    trace_path = out / "trace.csv"
    if args.resume:
        state, _ = load_checkpoint(args.resume, expected_hash=phash)
        fresh = init_heads(cfg, spec, np.random.default_rng(0))
        for name, head in fresh.items():
            if name not in state.heads or state.heads[name].mlp.sizes != head.mlp.sizes:
                raise cfgmod.ConfigError("network", f"checkpoint head {name!r} does not match the configured shapes")
        if not trace_path.exists():
            write_csv(trace_path, TRACE_HEADER, [])
    else:
        state = init_state(cfg, spec)
        write_csv(trace_path, TRACE_HEADER, [])
    remaining = max(cfg.training.iterations - state.iteration, 0)
    fh = open(trace_path, "a", newline="", encoding="utf-8")
    writer = csv.writer(fh, lineterminator="\n")

    def on_log(rec):
        writer.writerow([fmt(rec.iteration), fmt(rec.elbo), fmt(rec.residual_term), fmt(rec.lr), fmt(rec.wall_ms)])
        fh.flush()

    def on_checkpoint(st):
        save_checkpoint(ckpt, st, cfg_dict, phash)

    try:
        if not args.resume:
            on_checkpoint(state)
        state, trace = train_loop(cfg.training, solver_free_objective(spec, cfg.training), state, remaining,
                                  on_log=on_log, on_checkpoint=on_checkpoint)
    finally:
        fh.close()
    save_checkpoint(ckpt, state, cfg_dict, phash)
    final = trace[-1].elbo if trace else float("nan")
    print(f"iterations={state.iteration} skipped={state.skipped} final_elbo={fmt(final)} checkpoint={ckpt}")
    return EXIT_OK


def _report_json(report) -> str:
    body = {"seed": report.seed, "n_draws": report.n_draws, "metrics": report.metrics,
            "excluded_draws": report.excluded}
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


def cmd_eval(args) -> int:
    state, manifest = load_checkpoint(args.checkpoint)
    cfg = _config_from_checkpoint(manifest)
    spec = build_problem(cfg.problem)
    n_draws = cfg.evaluation.n_draws if args.n_draws is None else args.n_draws
    seed = cfg.evaluation.seed if args.seed is None else args.seed
    report = forward_inverse_eval(state, spec, n_draws, seed, workers=threads())
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_report.json").write_text(_report_json(report), encoding="utf-8")
    (out / "eval_timings.json").write_text(json.dumps(report.timings, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_csv(out / "eval_samples.csv", SAMPLES_HEADER,
              ([r[k] for k in SAMPLES_HEADER] for r in report.records))
    m = report.metrics
    print(" ".join(f"{k}={fmt(m[k])}" for k in sorted(m)))
    print(" ".join(f"{k}={v:.4g}" for k, v in sorted(report.timings.items())))
    return EXIT_OK


def cmd_predict(args) -> int:
    state, manifest = load_checkpoint(args.checkpoint)
    cfg = _config_from_checkpoint(manifest)
    spec = build_problem(cfg.problem)
    rows = read_rows(args.input)
    dz, df = spec.z_prior.dim, spec.f_prior.dim
    if args.direction == "forward":
        width = dz + df
        n_out = spec.n_nodes if hasattr(spec, "n_nodes") else spec.u_dim
        header = [f"mean_{i}" for i in range(n_out)] + [f"stdev_{i}" for i in range(n_out)]
    else:
        n_in = spec.n_nodes if hasattr(spec, "n_nodes") else spec.u_dim
        width = n_in + df
        header = [f"mean_{i}" for i in range(dz)] + [f"stdev_{i}" for i in range(dz)]
    if rows.size and rows.shape[1] != width:
        raise ad.ShapeError(f"row 0: expected {width} values, got {rows.shape[1]}")
    out_rows = []
    for i, row in enumerate(rows):
        if args.direction == "forward":
            mean, std = predict_forward(state.heads["alpha"], spec, row[None, :dz], row[None, dz:])
        else:
            u = row[None, :width - df]
            if not spec.pointwise:
                u = lstsq_coefficients(u, spec.mesh.nodes, spec.solution_order, spec.mesh.domain)
            zm, zv = predict_inverse(state.heads["beta"], spec, u, row[None, width - df:])
            mean, std = zm, np.sqrt(zv)
        out_rows.append(list(mean[0]) + list(std[0]))
    if args.output:
        write_csv(Path(args.output), header, out_rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        for r in out_rows:
            w.writerow([fmt(v) for v in r])
    return EXIT_OK


def _sigma_y(args, cfg) -> float:
    s = cfg.observation.sigma_y if args.sigma_y is None else args.sigma_y
    if not s > 0:
        raise cfgmod.ConfigError("observation.sigma_y", "must be positive")
    return s


def cmd_observe_train(args) -> int:
    """Train the encoder against a frozen inverse network from a pretrained checkpoint."""
    state, manifest = load_checkpoint(args.checkpoint)
    cfg = _config_from_checkpoint(manifest)
    if args.config:
        cfg.observation = _load_config(args).observation
    spec = build_problem(cfg.problem)
    sigma_y = _sigma_y(args, cfg)
    op = observation_operator(cfg, spec)
    o = cfg.observation
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    if args.data:
        data = read_rows(args.data)
        if data.size == 0:
            raise ValueError(f"{args.data}: no observation rows")
        if data.shape[1] not in (op.out_dim, op.out_dim + spec.f_prior.dim):
            raise ad.ShapeError(f"row 0: expected {op.out_dim} observation values (optionally followed by "
                                f"{spec.f_prior.dim} forcing values), got {data.shape[1]}")
        y = data[:, :op.out_dim]
    else:
        y, _, f, _ = synthesize_observations(spec, op, sigma_y, o.n_obs, o.data_seed)
        write_csv(out / "observations.csv", [f"y_{i}" for i in range(op.out_dim)] + [f"f_{i}" for i in range(f.shape[1])],
                  np.hstack([y, f]))
    if "phi" not in state.heads:
        rng = np.random.default_rng(cfg.training.seed + 1)
        state.heads["phi"] = init_heads(cfg, spec, rng, with_phi=True)["phi"]
    tc = TrainConfig(iterations=o.iterations, learning_rate=o.learning_rate, halving_period=o.halving_period,
                     seed=cfg.training.seed, clip_norm=cfg.training.clip_norm, log_period=cfg.training.log_period,
                     obs_batch=o.obs_batch)
    rows = []
    state, trace = train_encoder(state, spec, y, op, sigma_y, tc,
                                 on_log=lambda r: rows.append([r.iteration, r.elbo, r.residual_term, r.lr, r.wall_ms]))
    write_csv(out / "observe_trace.csv", TRACE_HEADER, rows)
    ckpt = Path(args.checkpoint_out) if args.checkpoint_out else out / "observer.json"
    cfg_dict = cfgmod.to_dict(cfg)
    save_checkpoint(ckpt, state, cfg_dict, spec_hash(cfg_dict["problem"]))
    print(f"observations={y.shape[0]} iterations={state.iteration} final_elbo={fmt(trace[-1].elbo if trace else float('nan'))} checkpoint={ckpt}")
    return EXIT_OK


def cmd_observe_infer(args) -> int:
    state, manifest = load_checkpoint(args.checkpoint)
    if "phi" not in state.heads:
        raise CheckpointError("checkpoint has no encoder; run observe-train first")
    cfg = _config_from_checkpoint(manifest)
    spec = build_problem(cfg.problem)
    op = observation_operator(cfg, spec)
    data = read_rows(args.data)
    width = op.out_dim + spec.f_prior.dim
    if data.size and data.shape[1] != width:
        raise ad.ShapeError(f"row 0: expected {op.out_dim} observations followed by {spec.f_prior.dim} forcing values, got {data.shape[1]}")
    n = args.n_draws or cfg.observation.posterior_samples
    seed = cfg.evaluation.seed if args.seed is None else args.seed
    out = _out_dir(args, cfg)
    dz = spec.z_prior.dim
    post_rows, comp_rows, u_rows = [], [], []
    if data.size:
        y, f = data[:, :op.out_dim], data[:, op.out_dim:]
        zm, zv, km, ks, comps = infer_parameters(state, spec, y, f, n, seed)
        um, us = reconstruct(state, spec, y)
        for i in range(y.shape[0]):
            post_rows.append([i] + list(zm[i]) + list(np.sqrt(zv[i])))
            u_rows.append([i] + list(um[i]) + list(us[i]))
            for j, c in enumerate(comps[i]):
                comp_rows.append([i, j] + list(c.mean) + list(c.stdev))
    n_free = len(comps[0][0].mean) if comp_rows else 0
    write_csv(out / "posterior_z.csv", ["row"] + [f"mean_{k}" for k in range(dz)] + [f"stdev_{k}" for k in range(dz)], post_rows)
    write_csv(out / "posterior_components.csv",
              ["row", "component"] + [f"mean_{k}" for k in range(n_free)] + [f"stdev_{k}" for k in range(n_free)], comp_rows)
    n_nodes = spec.n_nodes
    write_csv(out / "reconstruction.csv", ["row"] + [f"mean_{k}" for k in range(n_nodes)] + [f"stdev_{k}" for k in range(n_nodes)], u_rows)
    print(f"rows={len(post_rows)} samples={n} out_dir={out}")
    return EXIT_OK


def cmd_scan(args) -> int:
    state, manifest = load_checkpoint(args.checkpoint)
    cfg = _config_from_checkpoint(manifest)
    spec = build_problem(cfg.problem)
    if not spec.pointwise or spec.kind != "heat_collocation":
        raise cfgmod.ConfigError("problem.kind", "scan needs a heat_collocation checkpoint")
    gammas = args.gamma or cfg.evaluation.scan_gamma
    kappas = args.kappa or cfg.evaluation.scan_kappa
    if not gammas or not kappas:
        raise cfgmod.ConfigError("evaluation.scan_gamma", "scan grid is empty")
    res, std = residual_grid_scan(state, spec, gammas, kappas)
    rows = [[g, k, res[i, j], std[i, j]] for i, g in enumerate(gammas) for j, k in enumerate(kappas)]
    out = _out_dir(args, cfg)
    write_csv(out / "scan.csv", ["gamma", "kappa", "log10_mean_residual", "log10_mean_stdev"], rows)
    inside, outside = box_contrast(res, gammas, kappas)
    print(f"cells={len(rows)} inside_mean={fmt(inside)} outside_mean={fmt(outside)}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    eps = args.eps if args.eps is not None else cfg.evaluation.sweep_eps
    if not eps:
        raise cfgmod.ConfigError("evaluation.sweep_eps", "epsilon list is empty")
    seeds = args.seeds if args.seeds is not None else (cfg.evaluation.sweep_seeds or [cfg.training.seed])
    rows = epsilon_sweep(cfg, eps, seeds, n_draws=args.n_draws)
    out = _out_dir(args, cfg)
    write_csv(out / "sweep.csv", ["eps_u", "seed", "final_mnse", "failed"],
              [[r.eps, r.seed, r.final_mnse, int(r.failed)] for r in rows])
    write_csv(out / "sweep_traces.csv", ["eps_u", "seed"] + TRACE_HEADER[:-1],
              [[r.eps, r.seed, t.iteration, t.elbo, t.residual_term, t.lr] for r in rows for t in r.trace])
    for r in rows:
        print(f"eps_u={fmt(r.eps)} seed={r.seed} final_mnse={fmt(r.final_mnse)} failed={r.failed}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wrvi", description="Solver-free variational emulation of parametric PDEs.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=False, checkpoint=False):
        if config:
            sp.add_argument("--config", help="config JSON path or bundled config name")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True, help="checkpoint manifest (.json)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir")

    sp = sub.add_parser("train", help="train the forward and inverse networks")
    common(sp, config=True)
    sp.add_argument("--checkpoint", help="where to write the checkpoint (default <out-dir>/checkpoint.json)")
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="compare a checkpoint against the numerical oracle")
    common(sp, checkpoint=True)
    sp.add_argument("--n-draws", type=int)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="run the forward or inverse map on CSV rows")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--direction", choices=["forward", "inverse"], required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--output")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("observe-train", help="train the observation encoder against the frozen inverse map")
    common(sp, config=True, checkpoint=True)
    sp.add_argument("--data", help="CSV of observation rows (default: synthesize from the config)")
    sp.add_argument("--sigma-y", type=float)
    sp.add_argument("--checkpoint-out")
    sp.set_defaults(func=cmd_observe_train)

    sp = sub.add_parser("observe-infer", help="marginal parameter posterior for observation rows")
    common(sp, checkpoint=True)
    sp.add_argument("--data", required=True, help="CSV rows of observations followed by forcing coefficients")
    sp.add_argument("--n-draws", type=int, help="encoder samples per row")
    sp.set_defaults(func=cmd_observe_infer)

    sp = sub.add_parser("scan", help="residual and stdev scan over a (gamma, kappa) grid")
    common(sp, checkpoint=True)
    sp.add_argument("--gamma", type=float, nargs="+")
    sp.add_argument("--kappa", type=float, nargs="+")
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("sweep", help="train once per residual scale and compare final errors")
    common(sp, config=True)
    sp.add_argument("--eps", type=float, nargs="*")
    sp.add_argument("--seeds", type=int, nargs="*")
    sp.add_argument("--n-draws", type=int)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ad.NonFiniteError, FloatingPointError, OracleError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ad.ShapeError, ValueError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
