"""Synthetic observation data and encoder training against a frozen inverse map."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .basis import pushforward_gaussian
from .evaluation import kappa_field_moments, mnse
from .pde import newton_solve
from .prob import phi_encode, prior_sample
from .train import ObservationOperator, free_coordinates, TrainConfig, TrainState, marginal_posterior_z, observed_objective, train_loop


def synthesize_observations(spec, op: ObservationOperator, sigma_y: float, n: int, seed: int):
    """Draw (z, f) from the priors, solve with the oracle and observe with noise.

    Returns ``(y, z, f, u_nodal)``.
    """
    if not sigma_y >= 0:
        raise ValueError("sigma_y must be non-negative")
    rng = np.random.default_rng(seed)
    z = prior_sample(spec.z_prior, rng, n)
    f = prior_sample(spec.f_prior, rng, n)
    u = np.array([newton_solve(spec, z[i], f[i]) for i in range(n)]).reshape(n, spec.n_nodes)
    y = ad.value(op.apply(u)) + sigma_y * rng.standard_normal((n, op.out_dim))
    return y, z, f, u


def train_encoder(state: TrainState, spec, y, op: ObservationOperator, sigma_y: float, config: TrainConfig,
                  on_log=None, on_checkpoint=None, fresh: bool = True):
    """Fit the encoder head with the inverse head frozen.

    With ``fresh`` the optimizer counters restart, so the learning-rate
    schedule of ``config`` applies from its first step.
    """
    if not sigma_y > 0:
        raise ValueError("sigma_y must be positive")
    if "phi" not in state.heads:
        raise KeyError("state has no encoder head 'phi'")
    if fresh:
        state.trainable = ["phi"]
        state.m, state.v = {}, {}
        state.iteration = state.adam_t = state.skipped = 0
        state.__post_init__()
    objective = observed_objective(spec, y, op, sigma_y, config)
    return train_loop(config, objective, state, on_log=on_log, on_checkpoint=on_checkpoint)


def reconstruct(state: TrainState, spec, y):
    """Nodal mean and stdev of the encoder's reconstruction for rows of y."""
    q = phi_encode(state.heads["phi"], np.atleast_2d(y)).numpy()
    mean, cov = pushforward_gaussian(q.mean, np.exp(q.logvar), spec.V_u)
    return mean, np.sqrt(np.diagonal(cov, axis1=-2, axis2=-1))


def infer_parameters(state: TrainState, spec, y, f, n_samples: int, seed: int):
    """Marginal posterior over z per observation row, plus the nodal kappa moments."""
    y = np.atleast_2d(y)
    f = np.atleast_2d(f).reshape(y.shape[0], -1)
    rng = np.random.default_rng(seed)
    free = free_coordinates(spec)
    means, vars_, comps = [], [], []
    for i in range(y.shape[0]):
        m, v, c = marginal_posterior_z(state.heads["phi"], state.heads["beta"], y[i], f[i], n_samples, rng)
        zm = spec.z_prior.mean.copy()
        zv = np.zeros_like(zm)
        zm[free], zv[free] = m, v
        means.append(zm)
        vars_.append(zv)
        comps.append(c)
    means, vars_ = np.array(means), np.array(vars_)
    km, ks = kappa_field_moments(spec, means, vars_)
    return means, vars_, km, ks, comps


def observation_metrics(state, spec, y, z, f, u, n_samples: int, seed: int) -> dict:
    u_mean, _ = reconstruct(state, spec, y)
    _, _, km, _, _ = infer_parameters(state, spec, y, f, n_samples, seed)
    return {"u_mnse": mnse(u, u_mean), "kappa_mnse": mnse(spec.kappa_nodal(z), km)}


def observe_experiment(cfg, state: TrainState, spec) -> dict:
    """Encoder training on the configured synthetic data, scored on train and holdout rows.

    ``state`` must hold trained alpha/beta heads and an encoder head.
    """
    from .experiment import observation_operator

    o = cfg.observation
    op = observation_operator(cfg, spec)
    y, z, f, u = synthesize_observations(spec, op, o.sigma_y, o.n_obs + o.n_holdout, o.data_seed)
    tc = TrainConfig(iterations=o.iterations, learning_rate=o.learning_rate, halving_period=o.halving_period,
                     seed=cfg.training.seed, clip_norm=cfg.training.clip_norm, log_period=cfg.training.log_period,
                     obs_batch=o.obs_batch)
    state, trace = train_encoder(state, spec, y[:o.n_obs], op, o.sigma_y, tc)
    tr, ho = slice(0, o.n_obs), slice(o.n_obs, None)
    seed = cfg.evaluation.seed
    return {
        "state": state,
        "trace": trace,
        "train": observation_metrics(state, spec, y[tr], z[tr], f[tr], u[tr], o.posterior_samples, seed),
        "holdout": observation_metrics(state, spec, y[ho], z[ho], f[ho], u[ho], o.posterior_samples, seed)
        if o.n_holdout else {},
    }
