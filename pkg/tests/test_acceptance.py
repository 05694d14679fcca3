"""End-to-end acceptance criteria at desk scale.

Each test records one pass/fail line (printed in the terminal summary) and
then asserts at the stated tolerance.  Trained states are shared between
criteria through module-scoped fixtures.
"""
import functools
import time

import numpy as np
import pytest

from test_autodiff import BINARY, UNARY
from test_pde import heat_problem, manufactured_heat, wave_problem
from test_train import flat_params, tiny_spec, tiny_state, unflatten
from wrvi import autodiff as ad
from wrvi import config as cfgmod
from wrvi.checkpoint import load_checkpoint, save_checkpoint
from wrvi.evaluation import box_contrast, forward_inverse_eval, predict_forward, residual_grid_scan
from wrvi.experiment import build_problem, init_state, train_experiment
from wrvi.observe import observe_experiment
from wrvi.pde import collocation_residual, exact_field, newton_solve
from wrvi.prob import prior_sample
from wrvi.train import draw_solver_free, elbo_integrand, solver_free_objective, train_loop

pytestmark = pytest.mark.acceptance


# ------------------------------------------------------------ 1: autodiff

def test_c1_autodiff_correctness(criterion_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    errs = {}
    for name, (fn, _) in UNARY.items():
        x = rng.uniform(0.2, 2.0, 6)
        errs[name] = ad.gradient_check(fn, x)
    a, b = rng.normal(size=(3, 4)), rng.uniform(0.2, 2.0, 4)
    for name, op in BINARY.items():
        errs[name] = max(ad.gradient_check(lambda x: ad.sum(ad.square(op(x, b))), a),
                         ad.gradient_check(lambda y: ad.sum(ad.square(op(a, y))), b))
    m = rng.normal(size=(4, 2))
    errs["matmul"] = max(ad.gradient_check(lambda x: ad.sum(ad.square(ad.matmul(x, m))), a),
                         ad.gradient_check(lambda y: ad.sum(ad.square(ad.matmul(a, y))), m))
    errs["abs"] = ad.gradient_check(lambda x: ad.sum(ad.absolute(x)), rng.uniform(0.5, 2.0, 5) * [1, -1, 1, -1, 1])
    solver = ad.LinearSolver(np.array([[4.0, 1.0], [1.0, 3.0]]))
    errs["solve_const"] = ad.gradient_check(lambda x: ad.sum(ad.square(ad.solve_const(solver, x))), rng.normal(size=2))

    spec = tiny_spec()
    state = tiny_state(spec)
    draws = draw_solver_free(spec, np.random.default_rng(1), 1)
    heads = [state.heads["alpha"], state.heads["beta"]]

    def elbo(vec):
        al, be = unflatten(vec, heads)
        v, _ = elbo_integrand(al, be, spec, *draws)
        return ad.mean(v)

    errs["elbo"] = ad.gradient_check(elbo, flat_params(heads))
    worst = max(errs, key=errs.get)
    elapsed = time.perf_counter() - t0
    ok = errs[worst] < 1e-5 and elapsed < 60
    criterion_log(1, "autodiff gradient checks", ok,
                  f"{len(errs)} checks, worst {worst} rel err {errs[worst]:.2e} (< 1e-5), {elapsed:.1f} s")
    assert ok


# -------------------------------------------------------------- 2: oracle

def test_c2_oracle_exactness(criterion_log):
    cfg = cfgmod.bundled("linear_poisson_desk")
    spec = build_problem(cfg.problem)
    assert spec.mesh.n_elements == 60
    c0, f0, om_r = 0.3, 1.5, 0.7
    kappa = np.log1p(np.exp(c0))
    z = np.array([c0, 0.0, om_r])
    f = np.array([f0])
    x = spec.mesh.nodes
    # -kappa u'' = f0 with u(-1) = 0, u(1) = om_r
    exact = f0 / (2 * kappa) * (1 - x ** 2) + om_r * (x + 1) / 2
    err = float(np.max(np.abs(newton_solve(spec, z, f) - exact)))
    ok = err <= 1e-10
    criterion_log(2, "oracle vs closed form, 60 elements", ok, f"max nodal error {err:.2e} (<= 1e-10)")
    assert ok


# ------------------------------------------------------- 3: manufactured

def test_c3_manufactured_residuals(criterion_log):
    heat = heat_problem(32, conductivity="constant")
    r = ad.value(collocation_residual(heat, manufactured_heat(), np.array([[1.0, 1.0]])))
    heat_err = float(np.max(np.abs(r[:, :heat.grid.domain_idx.size])))
    wave = wave_problem(32)
    ev = exact_field(lambda x, t: np.sin(x - t), lambda x, t: -np.cos(x - t), lambda x, t: np.cos(x - t),
                     lambda x, t: -np.sin(x - t), lambda x, t: -np.sin(x - t))
    r = ad.value(collocation_residual(wave, ev, np.zeros((1, 4))))
    wave_err = float(np.max(np.abs(r[:, :wave.grid.domain_idx.size])))
    ok = heat_err < 1e-8 and wave_err < 1e-8
    criterion_log(3, "manufactured residuals", ok, f"heat {heat_err:.1e}, wave {wave_err:.1e} (< 1e-8)")
    assert ok


# ---------------------------------------------------- 4, 7: linear Poisson

@functools.lru_cache(maxsize=None)
def linear_run(seed: int, eps: float):
    cfg = cfgmod.bundled("linear_poisson_desk")
    cfg.problem.eps_u = eps
    state, spec, _ = train_experiment(cfg, seed=seed)
    return forward_inverse_eval(state, spec, cfg.evaluation.n_draws, cfg.evaluation.seed).metrics


def test_c4_linear_poisson_desk(criterion_log):
    results = [linear_run(seed, 0.01) for seed in range(5)]
    passed = [m["forward_mnse"] <= 1e-2 and m["inverse_mnse"] <= 5e-2 for m in results]
    ok = sum(passed) >= 4
    detail = ", ".join(f"s{i}: fwd {m['forward_mnse']:.1e} inv {m['inverse_mnse']:.1e}" for i, m in enumerate(results))
    criterion_log(4, "linear Poisson desk", ok, f"{sum(passed)}/5 seeds pass ({detail})")
    assert ok


def test_c7_epsilon_sweep_ordering(criterion_log):
    eps_values = [1e-1, 1e-2, 1e-3]
    medians = [float(np.median([linear_run(seed, eps)["forward_mnse"] for seed in range(3)])) for eps in eps_values]
    ok = all(b <= a for a, b in zip(medians, medians[1:]))
    detail = ", ".join(f"eps {e:g}: {m:.2e}" for e, m in zip(eps_values, medians))
    criterion_log(7, "epsilon sweep ordering", ok, f"median forward MNSE {detail}")
    assert ok


# -------------------------------------------------- 5, 9: nonlinear Poisson

@pytest.fixture(scope="module")
def nonlinear():
    cfg = cfgmod.bundled("nonlinear_poisson_desk")
    state, spec, _ = train_experiment(cfg)
    report = forward_inverse_eval(state, spec, cfg.evaluation.n_draws, cfg.evaluation.seed)
    return state, spec, report


def test_c5_nonlinear_poisson_desk(criterion_log, nonlinear):
    _, _, report = nonlinear
    m = report.metrics
    ok = m["forward_mnse"] <= 1e-2 and m["inverse_mnse"] <= 5e-2 and m["inverse_coverage"] >= 0.6
    criterion_log(5, "nonlinear Poisson desk", ok,
                  f"forward MNSE {m['forward_mnse']:.2e} (<= 1e-2), inverse MNSE {m['inverse_mnse']:.2e} (<= 5e-2), "
                  f"beta coverage {m['inverse_coverage']:.1%} (>= 60%), {m['n_evaluated']} draws")
    assert ok


def test_c9_speedup(criterion_log, nonlinear):
    state, spec, _ = nonlinear
    rng = np.random.default_rng(99)
    z = prior_sample(spec.z_prior, rng, 30)
    f = prior_sample(spec.f_prior, rng, 30)

    def per_sample(call):
        best = []
        for i in range(30):
            t = []
            for _ in range(3):
                t0 = time.perf_counter()
                call(i)
                t.append(time.perf_counter() - t0)
            best.append(min(t))
        return float(np.median(best))

    emulator = per_sample(lambda i: predict_forward(state.heads["alpha"], spec, z[i:i + 1], f[i:i + 1]))
    oracle = per_sample(lambda i: newton_solve(spec, z[i], f[i]))
    ratio = oracle / emulator
    ok = ratio >= 2.0
    criterion_log(9, "emulator speedup", ok,
                  f"oracle {1e3 * oracle:.3f} ms vs emulator {1e3 * emulator:.3f} ms per sample, {ratio:.1f}x (>= 2x)")
    assert ok


# ------------------------------------------------------------ 6: observe

def test_c6_observation_pipeline(criterion_log):
    cfg = cfgmod.bundled("observe")
    state, spec, _ = train_experiment(cfg, with_phi=True)
    out = observe_experiment(cfg, state, spec)
    m, h = out["train"], out["holdout"]
    ok = m["u_mnse"] <= 1e-2 and m["kappa_mnse"] <= 5e-2
    criterion_log(6, "observation pipeline", ok,
                  f"{cfg.observation.n_obs} observations: u MNSE {m['u_mnse']:.2e} (<= 1e-2), "
                  f"kappa MNSE {m['kappa_mnse']:.2e} (<= 5e-2); holdout u {h['u_mnse']:.2e}, kappa {h['kappa_mnse']:.2e}")
    assert ok


# --------------------------------------------------------------- 8: heat

def test_c8_heat_collocation_desk(criterion_log):
    cfg = cfgmod.bundled("heat_desk")
    state, spec, _ = train_experiment(cfg)
    m = forward_inverse_eval(state, spec, cfg.evaluation.n_draws, cfg.evaluation.seed).metrics
    ev = cfg.evaluation
    res, _ = residual_grid_scan(state, spec, ev.scan_gamma, ev.scan_kappa)
    inside, outside = box_contrast(res, ev.scan_gamma, ev.scan_kappa)
    ok = m["mean_sq_residual"] <= 1e-2 and m["inverse_coverage"] >= 0.6 and inside < outside
    criterion_log(8, "heat collocation desk", ok,
                  f"mean sq residual {m['mean_sq_residual']:.2e} (<= 1e-2), beta coverage {m['inverse_coverage']:.1%} "
                  f"(>= 60%), scan log10 residual inside {inside:.2f} vs outside {outside:.2f}")
    assert ok


# -------------------------------------------------------- 10: determinism

def test_c10_determinism_and_formats(criterion_log, tmp_path):
    cfg = cfgmod.bundled("nonlinear_poisson_desk")
    cfg.problem.n_elements = 12
    cfg.network.hidden = [16, 16]
    cfg.training.iterations = 30
    cfg.training.halving_period = 10
    cfg.training.beta_rescale_at = 10
    spec = build_problem(cfg.problem)
    obj = solver_free_objective(spec, cfg.training)

    def blob(state):
        path = save_checkpoint(tmp_path / f"s{time.perf_counter_ns()}.json", state, cfgmod.to_dict(cfg))
        return path.with_suffix(".bin").read_bytes()

    a, _ = train_loop(cfg.training, obj, init_state(cfg, spec))
    b, _ = train_loop(cfg.training, obj, init_state(cfg, spec))
    replay = blob(a) == blob(b)

    part, _ = train_loop(cfg.training, obj, init_state(cfg, spec), iterations=13)
    path = save_checkpoint(tmp_path / "mid.json", part, cfgmod.to_dict(cfg))
    resumed, _ = load_checkpoint(path)
    resumed, _ = train_loop(cfg.training, obj, resumed, iterations=17)
    resume = blob(resumed) == blob(a)

    good = path.with_suffix(".bin").read_bytes()
    rng = np.random.default_rng(5)
    rejected = 0
    for _ in range(100):
        bad = bytearray(good)
        bad[int(rng.integers(len(bad)))] ^= 1 << int(rng.integers(8))
        path.with_suffix(".bin").write_bytes(bytes(bad))
        try:
            load_checkpoint(path)
        except Exception as exc:  # noqa: BLE001
            rejected += type(exc).__name__ == "CheckpointError"

    round_trip = all(cfgmod.loads(cfgmod.dumps(cfgmod.bundled(n))) == cfgmod.bundled(n) for n in cfgmod.bundled_names())
    ok = replay and resume and rejected == 100 and round_trip
    criterion_log(10, "determinism and formats", ok,
                  f"replay {replay}, resume {resume}, corruptions rejected {rejected}/100, config round trip {round_trip}")
    assert ok
