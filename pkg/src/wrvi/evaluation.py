"""Metrics, forward/inverse evaluation, residual scans and the epsilon sweep."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import autodiff as ad
from .basis import lstsq_coefficients, pushforward_gaussian, unscented_marginals
from .pde import HeatProblem, OracleError, PoissonProblem, network_field, newton_solve
from .prob import alpha_forward, beta_inverse, prior_sample
from .train import free_coordinates

LOG_FLOOR = 1e-30


def mnse(truth, approx) -> float:
    """Mean over rows of ||truth - approx||^2 / ||truth||^2."""
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    approx = np.atleast_2d(np.asarray(approx, dtype=float))
    if truth.shape != approx.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {approx.shape}")
    if truth.shape[0] == 0:
        return float("nan")
    norms = np.sum(truth ** 2, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"truth row {zero[0]} has zero norm")
    return float(np.mean(np.sum((truth - approx) ** 2, axis=1) / norms))


def coverage_2sigma(truth, means, stdevs) -> float:
    truth, means, stdevs = (np.asarray(a, dtype=float) for a in (truth, means, stdevs))
    if not truth.shape == means.shape == stdevs.shape:
        raise ValueError(f"shape mismatch: {truth.shape}, {means.shape}, {stdevs.shape}")
    if np.any(stdevs < 0):
        raise ValueError("stdevs must be non-negative")
    if truth.size == 0:
        return float("nan")
    return float(np.mean(np.abs(truth - means) <= 2.0 * stdevs))


@dataclass
class EvalReport:
    seed: int
    n_draws: int
    metrics: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    excluded: list = field(default_factory=list)

    def add_block(self, draw: int, block: str, truth, mean, stdev):
        for k, (t, m, s) in enumerate(zip(np.ravel(truth), np.ravel(mean), np.ravel(stdev))):
            self.records.append({"draw": draw, "block": block, "coord": k, "truth": float(t),
                                 "mean": float(m), "stdev": float(s), "sq_err": float((t - m) ** 2)})


# ------------------------------------------------------------ predictions

def predict_forward(head, spec, z, f):
    """Mesh (or grid) mean and stdev of the forward map for rows of (z, f)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    f = np.atleast_2d(np.asarray(f, dtype=float)).reshape(z.shape[0], -1)
    if spec.pointwise:
        g = alpha_forward(head, z, f, points=spec.grid.points).numpy()
        return g.mean, g.stdev
    g = alpha_forward(head, z, f).numpy()
    mean, cov = pushforward_gaussian(g.mean, np.exp(g.logvar), spec.V_u)
    return mean, np.sqrt(np.diagonal(cov, axis1=-2, axis2=-1))


def predict_inverse(head, spec, u_repr, f):
    """Gaussian over all z coordinates; delta blocks come back with zero spread."""
    u_repr = np.atleast_2d(np.asarray(u_repr, dtype=float))
    f = np.atleast_2d(np.asarray(f, dtype=float)).reshape(u_repr.shape[0], -1)
    g = beta_inverse(head, u_repr, f).numpy()
    free = free_coordinates(spec)
    mean = np.tile(spec.z_prior.mean, (u_repr.shape[0], 1))
    var = np.zeros_like(mean)
    mean[:, free] = g.mean
    var[:, free] = np.exp(g.logvar)
    return mean, var


def kappa_field_moments(spec: PoissonProblem, z_mean, z_var):
    """Nodal kappa mean/stdev from a Gaussian over its Chebyshev coefficients."""
    sl = spec.z_prior.slices()["kappa"]
    raw_mean, raw_cov = pushforward_gaussian(z_mean[..., sl], z_var[..., sl], spec.V_kappa_nodes)
    raw_var = np.diagonal(raw_cov, axis1=-2, axis2=-1)
    m, v = unscented_marginals(raw_mean, raw_var, spec.kappa_transform)
    return m, np.sqrt(v)


def solve_heat_oracle(z, xs, ts, n_fine: int = 257, rtol: float = 1e-9, atol: float = 1e-11) -> np.ndarray:
    """Method-of-lines reference for the nonlinear heat problem on (xs x ts).

    Conservative second-order finite differences on a fine uniform grid, BDF
    in time, then linear interpolation onto ``xs``.
    """
    kappa, gamma = float(z[0]), float(z[1])
    if kappa <= 0 or gamma <= 0:
        raise ValueError("kappa and gamma must be positive")
    x_max = float(xs[-1])
    xf = np.linspace(0.0, x_max, n_fine)
    dx = xf[1] - xf[0]

    def rhs(_t, w):
        u = np.concatenate([[1.0], w, [1.0]])
        mid = 0.5 * (u[1:] + u[:-1])
        eta = mid * kappa + 1.0 / kappa
        flux = eta * np.diff(u) / dx
        return np.diff(flux) / (dx * gamma)

    u0 = np.sin(xf[1:-1]) + 1.0
    sol = solve_ivp(rhs, (0.0, float(ts[-1])), u0, method="BDF", t_eval=ts, rtol=rtol, atol=atol)
    if not sol.success:
        raise OracleError(f"heat oracle failed: {sol.message}")
    full = np.vstack([np.ones(ts.size), sol.y, np.ones(ts.size)])
    out = np.empty((xs.size, ts.size))
    for j in range(ts.size):
        out[:, j] = np.interp(xs, xf, full[:, j])
    out[:, 0] = np.sin(xs) + 1.0
    return out.ravel()


# ------------------------------------------------------------- evaluation

def _eval_draw(state, spec, i: int, seed: int, clock) -> dict:
    alpha, beta = state.heads["alpha"], state.heads["beta"]
    rng = np.random.default_rng(seed + i)
    z = prior_sample(spec.z_prior, rng, 1)
    f = prior_sample(spec.f_prior, rng, 1)
    out = {"draw": i}
    t0 = clock()
    mean, std = predict_forward(alpha, spec, z, f)
    out["emulator_s"] = clock() - t0
    t0 = clock()
    try:
        if isinstance(spec, PoissonProblem):
            truth = newton_solve(spec, z, f)
        elif isinstance(spec, HeatProblem):
            truth = solve_heat_oracle(z[0], spec.grid.xs, spec.grid.ts)
        else:
            truth = None
    except OracleError:
        out["excluded"] = True
        return out
    out["oracle_s"] = clock() - t0
    if truth is None:
        return out
    out["u"] = (truth, mean[0], std[0])
    t0 = clock()
    if isinstance(spec, PoissonProblem):
        coef = lstsq_coefficients(truth, spec.mesh.nodes, spec.solution_order, spec.mesh.domain)
        zm, zv = predict_inverse(beta, spec, coef, f)
        km, ks = kappa_field_moments(spec, zm, zv)
        out["inverse_s"] = clock() - t0
        out["inv"] = ("kappa", spec.kappa_nodal(z)[0], km[0], ks[0])
    else:
        zm, zv = predict_inverse(beta, spec, truth[None, :], f)
        out["inverse_s"] = clock() - t0
        out["inv"] = ("z", z[0], zm[0], np.sqrt(zv[0]))
    return out


def forward_inverse_eval(state, spec, n_draws: int, seed: int, workers: int = 1,
                         clock=time.perf_counter) -> EvalReport:
    """Compare both maps against the numerical oracle on prior draws.

    Draw ``i`` uses ``default_rng(seed + i)``; results are reduced in draw
    order whatever the number of workers.  Emulator and oracle calls are timed
    on separate clocks.
    """
    report = EvalReport(seed=seed, n_draws=n_draws)
    if workers > 1 and n_draws > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            draws = list(pool.map(lambda i: _eval_draw(state, spec, i, seed, clock), range(n_draws)))
    else:
        draws = [_eval_draw(state, spec, i, seed, clock) for i in range(n_draws)]
    fwd, inv = [], []
    for d in draws:
        if d.get("excluded"):
            report.excluded.append(d["draw"])
            continue
        if "u" in d:
            report.add_block(d["draw"], "u", *d["u"])
            fwd.append(d["u"])
            report.add_block(d["draw"], *d["inv"])
            inv.append(d["inv"][1:])
    m = report.metrics
    m["n_evaluated"] = len(fwd)
    m["n_excluded"] = len(report.excluded)
    if fwd:
        t, mu, sd = (np.array(a) for a in zip(*fwd))
        m["forward_mnse"] = mnse(t, mu)
        m["forward_coverage"] = coverage_2sigma(t, mu, sd)
        t, mu, sd = (np.array(a) for a in zip(*inv))
        m["inverse_mnse"] = mnse(t, mu)
        m["inverse_coverage"] = coverage_2sigma(t, mu, sd)
    if spec.pointwise and n_draws:
        zs = prior_sample(spec.z_prior, np.random.default_rng(seed), n_draws)
        m["mean_sq_residual"] = float(np.mean([mean_sq_residual(state.heads["alpha"], spec, zz) for zz in zs]))

    def avg_ms(key):
        vals = [d[key] for d in draws if key in d]
        return 1e3 * float(np.mean(vals)) if vals else float("nan")

    report.timings = {"emulator_ms": avg_ms("emulator_s"), "inverse_ms": avg_ms("inverse_s"),
                      "oracle_ms": avg_ms("oracle_s")}
    return report


def mean_sq_residual(alpha, spec, z, f=None) -> float:
    """Mean squared domain-block residual of the alpha-mean field at one z."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    f = np.zeros((1, spec.f_prior.dim)) if f is None else np.atleast_2d(f)
    r = ad.value(spec.collocation_residual(network_field(alpha, z, f), z))[0]
    n_dom = spec.grid.domain_idx.size
    return float(np.mean(r[:n_dom] ** 2))


def residual_grid_scan(state, spec, gammas, kappas):
    """log10 mean squared residual and log10 mean stdev over a (gamma, kappa) grid.

    Returns two arrays of shape (len(gammas), len(kappas)).  Cells use the
    domain block of the collocation grid; values are floored at 1e-30.
    """
    gammas = np.asarray(gammas, dtype=float)
    kappas = np.asarray(kappas, dtype=float)
    if np.any(kappas <= 0):
        raise ValueError("kappa values must be positive")
    alpha = state.heads["alpha"]
    res = np.empty((gammas.size, kappas.size))
    std = np.empty_like(res)
    dom = spec.grid.points[spec.grid.domain_idx]
    f = np.zeros((1, spec.f_prior.dim))
    for i, g in enumerate(gammas):
        for j, k in enumerate(kappas):
            z = np.array([[k, g]])
            res[i, j] = np.log10(max(mean_sq_residual(alpha, spec, z, f), LOG_FLOOR))
            s = alpha_forward(alpha, z, f, points=dom).stdev
            std[i, j] = np.log10(max(float(np.mean(s)), LOG_FLOOR))
    return res, std


def box_contrast(values, gammas, kappas, lo: float = 1.0, hi: float = 5.0):
    """(mean inside the training box, mean outside) over a scan matrix; NaN for an empty region."""
    gg, kk = np.meshgrid(np.asarray(gammas), np.asarray(kappas), indexing="ij")
    inside = (gg >= lo) & (gg <= hi) & (kk >= lo) & (kk <= hi)
    part = lambda v: float(np.mean(v)) if v.size else float("nan")
    return part(values[inside]), part(values[~inside])


@dataclass
class SweepRow:
    eps: float
    seed: int
    final_mnse: float
    failed: bool
    trace: list


def epsilon_sweep(cfg, eps_values, seeds=(0,), iterations: int | None = None, n_draws: int | None = None) -> list:
    """Independent trainings differing only in the residual scale."""
    from .experiment import build_problem, init_state
    from .train import solver_free_objective, train_loop

    eps_values = list(eps_values)
    if not eps_values:
        raise ValueError("need at least one epsilon")
    if any(not e > 0 for e in eps_values):
        raise ValueError("epsilon values must be positive")
    tc = cfg.training
    if iterations is not None:
        tc = type(tc)(**{**tc.__dict__, "iterations": iterations})
    n_draws = cfg.evaluation.n_draws if n_draws is None else n_draws
    rows = []
    for eps in eps_values:
        spec = build_problem(cfg.problem, eps_u=eps)
        for seed in seeds:
            state = init_state(cfg, spec, seed)
            state, trace = train_loop(tc, solver_free_objective(spec, tc), state)
            failed = state.skipped > 0 and not all(np.isfinite([r.elbo for r in trace[-1:]]))
            try:
                rep = forward_inverse_eval(state, spec, n_draws, cfg.evaluation.seed)
                final = rep.metrics.get("forward_mnse", float("nan"))
            except (ValueError, FloatingPointError):
                final, failed = float("nan"), True
            rows.append(SweepRow(eps, seed, final, failed or not np.isfinite(final), trace))
    return rows
