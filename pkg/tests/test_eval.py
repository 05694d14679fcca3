import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wrvi import autodiff as ad
from wrvi.evaluation import (
    box_contrast,
    coverage_2sigma,
    forward_inverse_eval,
    kappa_field_moments,
    mean_sq_residual,
    mnse,
    predict_forward,
    predict_inverse,
    residual_grid_scan,
    solve_heat_oracle,
)
from wrvi.pde import CollocationGrid, FieldValues, HeatProblem, Mesh1D, PoissonProblem, newton_solve
from wrvi.prob import PriorBlock, PriorSpec, make_head, zero_head
from wrvi.train import TrainState, free_coordinates


def test_mnse_examples():
    assert mnse([[1.0, 2.0]], [[1.0, 2.0]]) == 0.0
    assert mnse([[1.0, 1.0]], [[0.0, 0.0]]) == 1.0
    assert mnse([[2.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]) == pytest.approx(0.125, abs=1e-15)


def test_mnse_rejects_zero_rows_and_shape_mismatch():
    with pytest.raises(ValueError, match="row 1"):
        mnse([[1.0], [0.0]], [[1.0], [1.0]])
    with pytest.raises(ValueError):
        mnse([[1.0, 2.0]], [[1.0]])
    assert np.isnan(mnse(np.zeros((0, 3)), np.zeros((0, 3))))


rows = arrays(np.float64, (4, 3), elements=st.floats(0.1, 10.0))


@settings(max_examples=100, deadline=None)
@given(t=rows, a=rows, c=st.floats(0.01, 100.0), seed=st.integers(0, 1000))
def test_mnse_scale_and_order_invariant(t, a, c, seed):
    base = mnse(t, a)
    assert mnse(c * t, c * a) == pytest.approx(base, rel=1e-12, abs=1e-15)
    perm = np.random.default_rng(seed).permutation(4)
    assert mnse(t[perm], a[perm]) == pytest.approx(base, rel=1e-12, abs=1e-15)
    assert base >= 0


def test_coverage_examples():
    t = np.array([1.0, 2.0, 3.0])
    assert coverage_2sigma(t, t + 1.0, np.full(3, 1e6)) == 1.0
    assert coverage_2sigma(t, t + 1.0, np.zeros(3)) == 0.0
    with pytest.raises(ValueError):
        coverage_2sigma(t, t, -np.ones(3))
    with pytest.raises(ValueError):
        coverage_2sigma(t, t, np.ones(2))


def test_coverage_of_gaussian_draws():
    rng = np.random.default_rng(0)
    n = 100_000
    means = rng.normal(size=n)
    sd = rng.uniform(0.5, 2.0, n)
    truth = means + sd * rng.standard_normal(n)
    assert coverage_2sigma(truth, means, sd) == pytest.approx(0.9545, abs=0.004)


# ------------------------------------------------------------- evaluation

def small_poisson(kind="linear_poisson"):
    z = PriorSpec([PriorBlock("kappa", "normal", 2, (0.0, 0.5)), PriorBlock("omega_l", "delta", 1, (0.0,)),
                   PriorBlock("omega_r", "uniform", 1, (0.5, 1.0))])
    f = PriorSpec([PriorBlock("f", "uniform", 2, (1.0, 2.0))])
    return PoissonProblem(kind, Mesh1D.uniform(12), z, f, 0.01, solution_order=5, kappa_order=1, forcing_order=1)


def small_state(spec, seed=0):
    rng = np.random.default_rng(seed)
    alpha = make_head(spec.alpha_in_dim, spec.u_dim, [8], rng)
    beta = make_head(spec.beta_in_dim, free_coordinates(spec).size, [8], rng)
    return TrainState({"alpha": alpha, "beta": beta}, ["alpha", "beta"], rng)


def test_zero_draws_give_empty_report():
    spec = small_poisson()
    rep = forward_inverse_eval(small_state(spec), spec, 0, 1)
    assert rep.records == [] and rep.metrics["n_evaluated"] == 0 and rep.n_draws == 0


def test_report_is_deterministic_across_workers():
    spec = small_poisson("nonlinear_poisson")
    state = small_state(spec)
    a = forward_inverse_eval(state, spec, 6, 3, workers=1)
    b = forward_inverse_eval(state, spec, 6, 3, workers=3)
    assert a.metrics == b.metrics
    assert a.records == b.records
    assert a.metrics["n_evaluated"] == 6
    assert {r["block"] for r in a.records} == {"u", "kappa"}
    assert set(a.timings) == {"emulator_ms", "inverse_ms", "oracle_ms"}


def test_forward_prediction_is_the_pushforward():
    spec = small_poisson()
    state = small_state(spec)
    z = np.array([[0.1, -0.2, 0.0, 0.7]])
    f = np.array([[1.5, 1.2]])
    mean, std = predict_forward(state.heads["alpha"], spec, z, f)
    q = state.heads["alpha"](np.concatenate([z, f], axis=1)).numpy()
    np.testing.assert_allclose(mean, q.mean @ spec.V_u.T, rtol=1e-13)
    np.testing.assert_allclose(std ** 2, np.exp(q.logvar) @ (spec.V_u.T ** 2), rtol=1e-12)


def test_inverse_prediction_fills_delta_blocks():
    spec = small_poisson()
    state = small_state(spec)
    zm, zv = predict_inverse(state.heads["beta"], spec, np.zeros((2, spec.u_dim)), np.ones((2, 2)))
    np.testing.assert_array_equal(zm[:, 2], 0.0)
    np.testing.assert_array_equal(zv[:, 2], 0.0)
    assert np.all(zv[:, free_coordinates(spec)] > 0)


def test_kappa_moments_with_zero_variance_are_the_field():
    spec = small_poisson()
    z = np.array([[0.3, -0.4, 0.0, 0.6]])
    km, ks = kappa_field_moments(spec, z, np.zeros_like(z))
    np.testing.assert_allclose(km, spec.kappa_nodal(z), rtol=1e-14)
    np.testing.assert_allclose(ks, 0.0, atol=1e-12)


def test_oracle_truth_matches_newton_in_records():
    spec = small_poisson()
    rep = forward_inverse_eval(small_state(spec), spec, 1, 11)
    rng = np.random.default_rng(11)
    from wrvi.prob import prior_sample
    z = prior_sample(spec.z_prior, rng, 1)
    f = prior_sample(spec.f_prior, rng, 1)
    truth = [r["truth"] for r in rep.records if r["block"] == "u"]
    np.testing.assert_array_equal(truth, newton_solve(spec, z, f))


# -------------------------------------------------------------- heat scans

def heat():
    z = PriorSpec([PriorBlock("kappa", "uniform", 1, (1.0, 5.0)), PriorBlock("gamma", "uniform", 1, (1.0, 5.0))])
    return HeatProblem(CollocationGrid.uniform(6, 5), z, PriorSpec([]))


def test_scan_floor_for_exact_constant_field():
    spec = heat()
    one = zero_head(4, 1, [4], out_shift=np.array([1.0]))
    state = TrainState({"alpha": one}, [], np.random.default_rng(0))
    res, std = residual_grid_scan(state, spec, [1.0, 2.0], [1.0, 3.0, 5.0])
    assert res.shape == (2, 3)
    np.testing.assert_array_equal(res, -30.0)
    np.testing.assert_allclose(std, np.log10(np.exp(-5.9 / 2)), rtol=1e-12)


def test_scan_single_cell_equals_direct_call():
    spec = heat()
    alpha = make_head(4, 1, [6], np.random.default_rng(1))
    state = TrainState({"alpha": alpha}, [], np.random.default_rng(0))
    res, _ = residual_grid_scan(state, spec, [2.5], [1.5])
    direct = mean_sq_residual(alpha, spec, np.array([[1.5, 2.5]]))
    assert res[0, 0] == pytest.approx(np.log10(direct), rel=1e-14)
    with pytest.raises(ValueError):
        residual_grid_scan(state, spec, [1.0], [0.0])


def test_box_contrast():
    vals = np.array([[0.0, 1.0], [2.0, 3.0]])
    inside, outside = box_contrast(vals, [1.0, 6.0], [2.0, 0.5])
    assert inside == 0.0 and outside == 2.0
    inside, outside = box_contrast(np.array([[4.0]]), [2.0], [3.0])
    assert inside == 4.0 and np.isnan(outside)


def test_heat_oracle_constant_conductivity_limit():
    # with a tiny kappa the diffusivity is ~1/kappa, so use the linear
    # sin(x) e^{-t / (gamma kappa)} decay as an independent reference
    grid = CollocationGrid.uniform(30, 10, t_max=0.05)
    kappa, gamma = 1e-3, 1e3
    u = solve_heat_oracle(np.array([kappa, gamma]), grid.xs, grid.ts).reshape(grid.shape)
    xx, tt = np.meshgrid(grid.xs, grid.ts, indexing="ij")
    exact = 1.0 + np.sin(xx) * np.exp(-tt / (gamma * kappa))
    assert np.max(np.abs(u - exact)) < 2e-3
    np.testing.assert_allclose(u[:, 0], np.sin(grid.xs) + 1.0)
    with pytest.raises(ValueError):
        solve_heat_oracle(np.array([0.0, 1.0]), grid.xs, grid.ts)


def test_mean_sq_residual_uses_domain_block():
    spec = heat()
    zero = zero_head(4, 1, [3])
    # u = 0 everywhere: domain rows vanish, boundary and initial rows do not
    assert mean_sq_residual(zero, spec, np.array([[2.0, 2.0]])) == 0.0
    def zeros(points, needs=()):
        z = np.zeros((1, points.shape[0]))
        return FieldValues(z, z, z, z)

    full = ad.value(spec.collocation_residual(zeros, np.array([[2.0, 2.0]])))
    assert np.any(full != 0)
