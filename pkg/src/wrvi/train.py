"""Solver-free and observation ELBOs, Adam, and the training loop."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .nn import MlpParams
from .prob import (
    DiagGaussian,
    NetworkHead,
    alpha_forward,
    beta_inverse,
    gaussian_log_density,
    phi_encode,
    prior_log_density,
    prior_sample,
    sample_reparam,
)

ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    iterations: int = 1000
    n_samples: int = 1
    learning_rate: float = 1e-3
    halving_period: int = 200_000
    seed: int = 0
    clip_norm: float = 100.0
    checkpoint_period: int = 0
    log_period: int = 100
    lr_floor: float = 1e-6
    include_prior_terms: bool = False
    obs_batch: int = 0
    beta_rescale_at: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.halving_period < 1 or self.log_period < 1:
            raise ValueError("halving_period and log_period must be >= 1")
        if self.checkpoint_period < 0 or self.obs_batch < 0 or self.beta_rescale_at < 0:
            raise ValueError("checkpoint_period, obs_batch and beta_rescale_at must be >= 0")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")

    def lr_at(self, iteration: int) -> float:
        return max(self.learning_rate * 0.5 ** (iteration // self.halving_period), self.lr_floor)


@dataclass
class TrainState:
    """Network heads plus optimizer state.

    ``trainable`` lists the heads the optimizer updates; the rest are frozen.
    ``adam_t`` counts applied updates and drives bias correction, so skipped
    steps leave it alone.
    """

    heads: dict
    trainable: list
    rng: np.random.Generator
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    iteration: int = 0
    adam_t: int = 0
    lr: float = 0.0
    skipped: int = 0

    def __post_init__(self):
        for name in self.trainable:
            if name not in self.heads:
                raise KeyError(f"trainable head {name!r} missing")
            params = self.heads[name].params()
            self.m.setdefault(name, [np.zeros_like(p) for p in params])
            self.v.setdefault(name, [np.zeros_like(p) for p in params])
            for p, a, b in zip(params, self.m[name], self.v[name]):
                if a.shape != p.shape or b.shape != p.shape:
                    raise ad.ShapeError(f"moment shapes of head {name!r} do not mirror its parameters")

    def copy(self) -> "TrainState":
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        heads = {k: h.with_params([p.copy() for p in h.params()]) for k, h in self.heads.items()}
        return TrainState(heads, list(self.trainable), rng,
                          {k: [a.copy() for a in v] for k, v in self.m.items()},
                          {k: [a.copy() for a in v] for k, v in self.v.items()},
                          self.iteration, self.adam_t, self.lr, self.skipped)


@dataclass
class TraceRecord:
    iteration: int
    elbo: float
    residual_term: float
    lr: float
    wall_ms: float


# ------------------------------------------------------------- objectives

def free_coordinates(spec) -> np.ndarray:
    """Indices of z the inverse network predicts (delta blocks are fixed)."""
    idx, start = [], 0
    for b in spec.z_prior.blocks:
        if b.kind != "delta":
            idx.extend(range(start, start + b.size))
        start += b.size
    return np.array(idx, dtype=int)


def draw_solver_free(spec, rng: np.random.Generator, n: int):
    """(z, f, noise) for ``n`` Monte Carlo samples, drawn in that order."""
    z = prior_sample(spec.z_prior, rng, n)
    f = prior_sample(spec.f_prior, rng, n)
    noise = rng.standard_normal((n, spec.u_dim))
    return z, f, noise


def elbo_integrand(alpha: NetworkHead, beta: NetworkHead, spec, z, f, noise):
    """Per-sample integrand and residual log-likelihood, each of shape (B,)."""
    u, q, r = spec.forward_sample(alpha, z, f, noise)
    res = spec.residual_cov.log_likelihood_zero(r)
    free = free_coordinates(spec)
    log_beta = gaussian_log_density(np.asarray(z)[:, free], beta_inverse(beta, u, f))
    log_q = gaussian_log_density(u, q)
    return ad.sub(ad.add(res, log_beta), log_q), res


def prior_terms(spec, z, f) -> np.ndarray:
    return prior_log_density(spec.z_prior, z) + prior_log_density(spec.f_prior, f)


def elbo_solver_free(state: TrainState, spec, rng: np.random.Generator, n_samples: int = 1,
                     include_prior_terms: bool = False, draws=None):
    """Monte Carlo estimate of the solver-free ELBO and its gradients.

    Returns ``(elbo, residual_term, grads)`` where ``grads`` maps "alpha" and
    "beta" to lists shaped like the head parameters (gradients of the ELBO,
    not of its negation).
    """
    z, f, noise = draw_solver_free(spec, rng, n_samples) if draws is None else draws
    alpha, beta = state.heads["alpha"], state.heads["beta"]
    na = len(alpha.params())
    box = {}

    def loss(*params):
        v, res = elbo_integrand(alpha.with_params(params[:na]), beta.with_params(params[na:]), spec, z, f, noise)
        box["res"] = float(np.mean(ad.value(res)))
        return ad.neg(ad.mean(v))

    neg_value, grads = ad.value_and_grad(loss, alpha.params() + beta.params())
    elbo = -neg_value
    if include_prior_terms:
        elbo += float(np.mean(prior_terms(spec, z, f)))
    return elbo, box["res"], {"alpha": [-g for g in grads[:na]], "beta": [-g for g in grads[na:]]}


# ------------------------------------------------------------ observations

@dataclass
class ObservationOperator:
    """Selects observed nodal values: ``identity`` or ``truncate_middle``."""

    kind: str = "identity"
    n_nodes: int = 61
    width: int = 20

    def __post_init__(self):
        if self.kind not in ("identity", "truncate_middle"):
            raise ValueError(f"unknown observation operator {self.kind!r}")
        if self.kind == "truncate_middle" and not 0 < self.width < self.n_nodes:
            raise ValueError("truncation width must be in (0, n_nodes)")

    @property
    def index(self) -> np.ndarray:
        if self.kind == "identity":
            return np.arange(self.n_nodes)
        start = (self.n_nodes - self.width) // 2
        keep = np.ones(self.n_nodes, dtype=bool)
        keep[start:start + self.width] = False
        return np.flatnonzero(keep)

    @property
    def out_dim(self) -> int:
        return self.index.size

    def apply(self, nodal):
        if ad.value(nodal).shape[-1] != self.n_nodes:
            raise ad.ShapeError(f"observation operator expects {self.n_nodes} nodal values, got {ad.value(nodal).shape[-1]}")
        return ad.take(nodal, (slice(None), self.index)) if ad.value(nodal).ndim == 2 else ad.take(nodal, self.index)


def observed_integrand(phi: NetworkHead, spec, y, op: ObservationOperator, sigma_y: float, noise):
    """log N(y; g(u), sigma_y^2 I) - log q_phi(u | y) per observation row."""
    if not sigma_y > 0:
        raise ValueError("sigma_y must be positive")
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape[1] != op.out_dim:
        raise ad.ShapeError(f"observations have {y.shape[1]} values, operator yields {op.out_dim}")
    q = phi_encode(phi, y)
    u = sample_reparam(q, noise)
    pred = op.apply(spec.u_nodal(u))
    lik = gaussian_log_density(y, DiagGaussian(pred, np.full(y.shape, 2.0 * np.log(sigma_y))))
    return ad.sub(lik, gaussian_log_density(u, q)), lik


def elbo_observed(state: TrainState, spec, y_batch, op: ObservationOperator, sigma_y: float,
                  rng: np.random.Generator, noise=None):
    """One-sample-per-observation ELBO estimate and gradients for the encoder."""
    y_batch = np.atleast_2d(np.asarray(y_batch, dtype=float))
    phi = state.heads["phi"]
    if noise is None:
        noise = rng.standard_normal((y_batch.shape[0], phi.out_dim))
    box = {}

    def loss(*params):
        v, lik = observed_integrand(phi.with_params(params), spec, y_batch, op, sigma_y, noise)
        box["lik"] = float(np.mean(ad.value(lik)))
        return ad.neg(ad.mean(v))

    neg_value, grads = ad.value_and_grad(loss, phi.params())
    return -neg_value, box["lik"], {"phi": [-g for g in grads]}


def marginal_posterior_z(phi: NetworkHead, beta: NetworkHead, y, f, n_samples: int, rng: np.random.Generator):
    """Moment-matched mixture of p_beta(z | u_j, f) over u_j ~ q_phi(u | y).

    Returns ``(mean, var, components)`` for one observation row, where
    ``components`` is the list of per-sample Gaussians.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    q = phi_encode(phi, np.asarray(y, dtype=float)).numpy()
    u = q.mean + q.stdev * rng.standard_normal((n_samples, q.dim))
    f_rows = np.tile(np.atleast_2d(np.asarray(f, dtype=float)), (n_samples, 1))
    comp = beta_inverse(beta, u, f_rows).numpy()
    means, var = comp.mean, np.exp(comp.logvar)
    mix_mean = means.mean(axis=0)
    mix_var = var.mean(axis=0) + ((means - mix_mean) ** 2).mean(axis=0)
    return mix_mean, mix_var, [comp.row(j) for j in range(n_samples)]


# -------------------------------------------------------------------- Adam

def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for gs in grads.values() for g in gs)))


def adam_step(state: TrainState, grads: dict, lr: float, clip_norm: float | None = None,
              b1: float = ADAM_B1, b2: float = ADAM_B2, eps: float = ADAM_EPS) -> TrainState:
    """Bias-corrected Adam descent on ``grads`` (gradients of the loss), in place."""
    for name, gs in grads.items():
        params = state.heads[name].params()
        if len(gs) != len(params) or any(g.shape != p.shape for g, p in zip(gs, params)):
            raise ad.ShapeError(f"gradient shapes do not match head {name!r}")
    scale = 1.0
    if clip_norm is not None:
        norm = global_norm(grads)
        if norm > clip_norm:
            scale = clip_norm / norm
    state.adam_t += 1
    t = state.adam_t
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, gs in grads.items():
        head = state.heads[name]
        new = []
        for p, g, m, v in zip(head.params(), gs, state.m[name], state.v[name]):
            g = g * scale
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            new.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        state.heads[name] = head.with_params(new)
    state.lr = lr
    return state


# ------------------------------------------------------------------- loop

def rescale_beta_inputs(state: TrainState, spec, n: int = 256, seed: int = 0) -> TrainState:
    """Re-standardise the solution part of the inverse head's input.

    Shift and scale come from the forward-network means over ``n`` prior
    draws, so each solution coordinate enters with unit spread.  The first
    layer and its Adam moments are transformed so the head computes the same
    function as before.
    """
    rng = np.random.default_rng(seed)
    z = prior_sample(spec.z_prior, rng, n)
    f = prior_sample(spec.f_prior, rng, n)
    alpha = state.heads["alpha"]
    g = alpha_forward(alpha, z, f, points=spec.grid.points if spec.pointwise else None).numpy()
    d = g.mean.shape[1]
    shift_new = g.mean.mean(axis=0)
    std = g.mean.std(axis=0)
    scale_new = np.where(std > 1e-12 * max(float(std.max()), 1e-300), std, 1.0)
    head = state.heads["beta"]
    shift, scale = head.in_shift.copy(), head.in_scale.copy()
    ratio = np.ones_like(scale)
    ratio[:d] = scale_new / scale[:d]
    offset = np.zeros_like(shift)
    offset[:d] = (shift_new - shift[:d]) / scale[:d]
    layers = [(np.array(ad.value(w)), np.array(ad.value(b))) for w, b in head.mlp.layers]
    w0, b0 = layers[0]
    layers[0] = (ratio[:, None] * w0, b0 + offset @ w0)
    shift[:d], scale[:d] = shift_new, scale_new
    state.heads["beta"] = NetworkHead(MlpParams(layers, head.mlp.activation), head.out_dim, head.lv_min, head.lv_max,
                                      shift, scale, head.out_shift, head.out_scale)
    if "beta" in state.m:
        state.m["beta"][0] = state.m["beta"][0] / ratio[:, None]
        state.v["beta"][0] = state.v["beta"][0] / (ratio ** 2)[:, None]
    return state


def solver_free_objective(spec, config: TrainConfig):
    def objective(state: TrainState):
        if config.beta_rescale_at and state.iteration == config.beta_rescale_at and "beta" in state.trainable:
            rescale_beta_inputs(state, spec, seed=config.seed)
        return elbo_solver_free(state, spec, state.rng, config.n_samples, config.include_prior_terms)
    return objective


def observed_objective(spec, y_data, op: ObservationOperator, sigma_y: float, config: TrainConfig):
    y_data = np.atleast_2d(np.asarray(y_data, dtype=float))

    def objective(state: TrainState):
        n = y_data.shape[0]
        if config.obs_batch and config.obs_batch < n:
            idx = np.sort(state.rng.choice(n, size=config.obs_batch, replace=False))
            batch = y_data[idx]
        else:
            batch = y_data
        return elbo_observed(state, spec, batch, op, sigma_y, state.rng)

    return objective


def train_loop(config: TrainConfig, objective, state: TrainState, iterations: int | None = None,
               on_log=None, on_checkpoint=None, clock=time.perf_counter) -> tuple[TrainState, list]:
    """Run ``iterations`` (default ``config.iterations``) steps on ``state`` in place.

    A step whose estimate or gradients are non-finite is skipped without
    touching parameters or moments.  ``on_checkpoint(state)`` fires every
    ``checkpoint_period`` iterations.
    """
    steps = config.iterations if iterations is None else iterations
    trace = []
    t_start = clock()
    for _ in range(steps):
        lr = config.lr_at(state.iteration)
        try:
            elbo, res, grads = objective(state)
            finite = np.isfinite(elbo) and all(np.all(np.isfinite(g)) for gs in grads.values() for g in gs)
        except (ad.NonFiniteError, FloatingPointError):
            elbo, res, finite = float("nan"), float("nan"), False
        if finite:
            adam_step(state, {k: [-g for g in gs] for k, gs in grads.items() if k in state.trainable},
                      lr, config.clip_norm)
        else:
            state.skipped += 1
        state.lr = lr
        state.iteration += 1
        if state.iteration % config.log_period == 0:
            rec = TraceRecord(state.iteration, elbo, res, lr, 1e3 * (clock() - t_start))
            trace.append(rec)
            if on_log is not None:
                on_log(rec)
        if on_checkpoint is not None and config.checkpoint_period and state.iteration % config.checkpoint_period == 0:
            on_checkpoint(state)
    return state, trace
