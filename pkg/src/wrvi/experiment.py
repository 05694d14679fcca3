"""Builders turning an :class:`ExperimentConfig` into problems and train states."""
from __future__ import annotations

import numpy as np

from .config import ExperimentConfig, ProblemConfig
from .pde import CollocationGrid, HeatProblem, Mesh1D, PoissonProblem, WaveProblem
from .prob import PriorBlock, PriorSpec, make_head
from .train import ObservationOperator, TrainState, free_coordinates


def _prior(blocks) -> PriorSpec:
    return PriorSpec([PriorBlock(b.name, b.kind, b.size, b.params) for b in blocks])


def build_problem(p: ProblemConfig, eps_u: float | None = None):
    z_prior, f_prior = _prior(p.z_prior), _prior(p.f_prior)
    if p.kind in ("nonlinear_poisson", "linear_poisson"):
        mesh = Mesh1D.uniform(p.n_elements, tuple(p.domain), tuple(p.dirichlet))
        return PoissonProblem(p.kind, mesh, z_prior, f_prior, p.eps_u if eps_u is None else eps_u,
                              p.solution_order, p.kappa_order, p.forcing_order, p.kappa_transform,
                              p.quad_points, p.precondition)
    grid = CollocationGrid.uniform(p.grid_nx, p.grid_nt, p.x_max, p.t_max)
    eps_d = p.eps_domain if eps_u is None else eps_u
    if p.kind == "heat_collocation":
        return HeatProblem(grid, z_prior, f_prior, eps_d, p.eps_boundary, p.eps_initial, p.conductivity)
    return WaveProblem(grid, z_prior, f_prior, eps_d, p.eps_boundary, p.eps_initial)


def _safe_scale(std: np.ndarray) -> np.ndarray:
    return np.where(std > 0, std, 1.0)


def init_heads(cfg: ExperimentConfig, spec, rng: np.random.Generator, with_phi: bool = False) -> dict:
    net = cfg.network
    zs, fs = spec.z_prior, spec.f_prior
    zf_shift = np.concatenate([zs.mean, fs.mean])
    zf_scale = _safe_scale(np.concatenate([zs.std, fs.std]))
    common = dict(activation=net.activation, lv_min=net.lv_min, lv_max=net.lv_max, last_scale=net.last_scale)
    if spec.pointwise:
        g = spec.grid
        xt_shift = np.array([0.5 * g.xs[-1], 0.5 * g.ts[-1]])
        xt_scale = np.array([g.xs[-1], g.ts[-1]]) / np.sqrt(12.0)
        alpha = make_head(2 + zs.dim + fs.dim, 1, net.hidden, rng,
                          in_shift=np.concatenate([xt_shift, zf_shift]),
                          in_scale=np.concatenate([xt_scale, zf_scale]),
                          out_scale=np.array([net.field_scale]), **common)
    else:
        alpha = make_head(zs.dim + fs.dim, spec.u_dim, net.hidden, rng, in_shift=zf_shift, in_scale=zf_scale,
                          out_scale=np.full(spec.u_dim, net.field_scale), **common)
    free = free_coordinates(spec)
    beta = make_head(spec.u_dim + fs.dim, free.size, net.beta_hidden or net.hidden, rng,
                     in_shift=np.concatenate([np.zeros(spec.u_dim), fs.mean]),
                     in_scale=np.concatenate([np.full(spec.u_dim, net.field_scale), _safe_scale(fs.std)]),
                     out_shift=zs.mean[free], out_scale=_safe_scale(zs.std[free]), **common)
    heads = {"alpha": alpha, "beta": beta}
    if with_phi:
        op = observation_operator(cfg, spec)
        heads["phi"] = make_head(op.out_dim, spec.u_dim, net.phi_hidden or net.hidden, rng,
                                 out_scale=np.full(spec.u_dim, net.field_scale), **common)
    return heads


def observation_operator(cfg: ExperimentConfig, spec) -> ObservationOperator:
    n = spec.n_nodes if hasattr(spec, "n_nodes") else spec.u_dim
    return ObservationOperator(cfg.observation.operator, n, cfg.observation.width)


def init_state(cfg: ExperimentConfig, spec, seed: int | None = None, with_phi: bool = False) -> TrainState:
    """Fresh state: the seed feeds network initialisation, then the training draws."""
    seed = cfg.training.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    heads = init_heads(cfg, spec, rng, with_phi)
    return TrainState(heads, ["alpha", "beta"], rng, lr=cfg.training.learning_rate)


def train_experiment(cfg: ExperimentConfig, seed: int | None = None, iterations: int | None = None,
                     with_phi: bool = False, on_log=None):
    """Solver-free training from a fresh state. Returns ``(state, spec, trace)``."""
    from .train import solver_free_objective, train_loop

    spec = build_problem(cfg.problem)
    state = init_state(cfg, spec, seed, with_phi)
    state, trace = train_loop(cfg.training, solver_free_objective(spec, cfg.training), state, iterations,
                              on_log=on_log)
    return state, spec, trace
