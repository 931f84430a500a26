import numpy as np
import pytest

from filterstab import benchmark, simulate
from filterstab.errors import PriorNotAbsolutelyContinuous
from filterstab.model_core import FiniteHmm, transition_matrix
from filterstab.simulate import (
    KS_EULER,
    TimeGrid,
    ZAKAI_SPLIT,
    filter_step,
    filter_trajectory,
    path_rng,
    run_twin_filters,
    sample_chain_batch_kernel,
    sample_ctmc,
    sample_observations,
    sample_paths_batch,
    twin_filter_batch,
)

MU = np.array([0.25, 0.40, 0.30, 0.05])
NU = np.array([0.1, 0.2, 0.3, 0.4])


def test_grid_validation():
    g = TimeGrid(2.0, 0.5)
    assert g.n_steps == 4
    np.testing.assert_allclose(g.times, [0, 0.5, 1.0, 1.5, 2.0])
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0.3)
    with pytest.raises(ValueError):
        TimeGrid(1.0, -0.1)


def test_ctmc_frozen_when_no_rates():
    model = FiniteHmm(A=np.zeros((3, 3)), H=np.arange(3.0))
    rng = np.random.default_rng(0)
    path = sample_ctmc(model, [0.2, 0.5, 0.3], TimeGrid(5.0, 0.1), rng)
    assert np.all(path == path[0])


def test_ctmc_occupation_matches_invariant_measure():
    model = benchmark.two_state_model(1.0, 1.0, 1.0, -1.0)
    rng = np.random.default_rng(1)
    path = sample_ctmc(model, [0.5, 0.5], TimeGrid(1000.0, 0.1), rng)
    frac = np.mean(path == 0)
    # stderr for correlated occupancy ~ sqrt(2 * relax_time / T) * 0.5
    assert abs(frac - 0.5) <= 3 * 0.5 * np.sqrt(2 * 0.5 / 1000.0)


def test_ctmc_respects_closed_class():
    model = benchmark.four_state_model(0.0, "h1")
    rng = np.random.default_rng(2)
    path = sample_ctmc(model, [0.5, 0.5, 0.0, 0.0], TimeGrid(50.0, 0.05), rng)
    assert np.all(path <= 1)


def test_observation_increments_pure_noise():
    model = FiniteHmm(A=np.zeros((2, 2)), H=np.zeros(2))
    grid = TimeGrid(50.0, 0.01)
    rng = np.random.default_rng(3)
    x = sample_ctmc(model, [1.0, 0.0], grid, rng)
    dz = sample_observations(model, x, grid, rng)
    z = dz[:, 0] / np.sqrt(grid.dt)
    n = z.size
    assert abs(z.mean()) <= 3 / np.sqrt(n)
    assert abs(z.var() - 1.0) <= 3 * np.sqrt(2 / n)


def test_observation_drift_recovers_h():
    model = FiniteHmm(A=np.zeros((2, 2)), H=np.array([1.7, -0.3]))
    grid = TimeGrid(200.0, 0.05)
    rng = np.random.default_rng(4)
    x = np.zeros(grid.n_steps + 1, dtype=int)
    dz = sample_observations(model, x, grid, rng)
    est = dz[:, 0].mean() / grid.dt
    assert abs(est - 1.7) <= 3 / np.sqrt(grid.n_steps * grid.dt)


def test_filter_matches_kolmogorov_when_blind():
    # H = 0: the filter never learns and must follow the forward equation
    model = FiniteHmm(A=benchmark.rate_matrix(0.1), H=np.zeros(4))
    grid = TimeGrid(1.0, 0.001)
    rng = np.random.default_rng(5)
    x = sample_ctmc(model, MU, grid, rng)
    dz = sample_observations(model, x, grid, rng)
    pi = filter_trajectory(model, MU, dz, grid.dt)
    exact = MU @ transition_matrix(model, 1.0)
    assert np.max(np.abs(pi[-1] - exact)) <= 5 * grid.dt


def test_filter_concentrates_static_case():
    model = FiniteHmm(A=np.zeros((3, 3)), H=np.array([0.0, 2.0, 4.0]))
    grid = TimeGrid(30.0, 0.01)
    rng = np.random.default_rng(6)
    x = np.ones(grid.n_steps + 1, dtype=int)
    dz = sample_observations(model, x, grid, rng)
    pi = filter_trajectory(model, np.ones(3) / 3, dz, grid.dt)
    assert pi[-1, 1] > 0.999


def test_filter_point_mass_fixed_point():
    model = FiniteHmm(A=np.zeros((2, 2)), H=np.array([1.0, -1.0]))
    pi = np.array([1.0, 0.0])
    out = filter_step(model, pi, np.array([1.0 * 0.01]), 0.01)
    np.testing.assert_allclose(out, pi, atol=1e-12)


def test_filter_steps_stay_on_simplex_both_schemes():
    rng = np.random.default_rng(7)
    model = benchmark.four_state_model(0.1, "h3")
    for scheme in (ZAKAI_SPLIT, KS_EULER):
        pi = np.ones(4) / 4
        for _ in range(200):
            dz = rng.normal(scale=0.2, size=1)
            pi = filter_step(model, pi, dz, 0.01, scheme)
            assert np.all(pi >= 0)
            assert abs(pi.sum() - 1.0) <= 1e-10


def test_scheme_gap_shrinks_first_order():
    model = benchmark.four_state_model(0.1, "h3")
    rng = np.random.default_rng(8)
    gaps = []
    for dt in (0.02, 0.01):
        grid = TimeGrid(2.0, dt)
        x = sample_ctmc(model, MU, grid, np.random.default_rng(99))
        dz = sample_observations(model, x, grid, np.random.default_rng(98))
        a = filter_trajectory(model, MU, dz, dt, ZAKAI_SPLIT)
        b = filter_trajectory(model, MU, dz, dt, KS_EULER)
        gaps.append(np.max(np.abs(a - b)))
    assert gaps[1] <= 0.75 * gaps[0]


def test_twin_filters_equal_priors():
    model = benchmark.four_state_model(0.1, "h3")
    bundle = run_twin_filters(model, NU, NU, TimeGrid(1.0, 0.01),
                              rng=np.random.default_rng(9))
    np.testing.assert_allclose(bundle.gamma_T, 1.0, atol=1e-9)
    np.testing.assert_allclose(bundle.pi_mu, bundle.pi_nu, atol=1e-12)


def test_twin_filters_absolute_continuity():
    model = benchmark.two_state_model(1.0, 1.0, 1.0, -1.0)
    with pytest.raises(PriorNotAbsolutelyContinuous):
        run_twin_filters(model, [0.5, 0.5], [1.0, 0.0], TimeGrid(1.0, 0.01),
                         rng=np.random.default_rng(10))


def test_gamma_short_horizon_is_prior_ratio():
    model = benchmark.four_state_model(0.1, "h3")
    bundle = run_twin_filters(model, MU, NU, TimeGrid(0.005, 0.005),
                              rng=np.random.default_rng(11))
    np.testing.assert_allclose(bundle.gamma_T, MU / NU, rtol=0.05)


def test_gamma_normalization_exact():
    model = benchmark.four_state_model(0.1, "h3")
    bundle = run_twin_filters(model, MU, NU, TimeGrid(3.0, 0.01),
                              rng=np.random.default_rng(12))
    assert np.all(bundle.gamma_T >= 0)
    assert abs(float(bundle.pi_nu[-1] @ bundle.gamma_T) - 1.0) <= 1e-12


def test_path_streams_independent_of_batching():
    model = benchmark.four_state_model(0.1, "h1")
    grid = TimeGrid(1.0, 0.02)
    xa, dza = sample_paths_batch(model, grid, 123, range(6), prior=MU)
    xb, dzb = sample_paths_batch(model, grid, 123, [3, 4, 5], prior=MU)
    np.testing.assert_array_equal(xa[3:], xb)
    np.testing.assert_array_equal(dza[3:], dzb)


def test_batch_filter_agrees_with_scalar_path():
    model = benchmark.four_state_model(0.1, "h3")
    grid = TimeGrid(1.0, 0.01)
    x, dz = sample_paths_batch(model, grid, 7, range(3), prior=MU)
    pi_mu_T, pi_nu_T, chi2, _ = twin_filter_batch(model, MU, NU, dz, grid.dt)
    for i in range(3):
        traj = filter_trajectory(model, MU, dz[i], grid.dt)
        np.testing.assert_allclose(pi_mu_T[i], traj[-1], atol=1e-12)
    assert chi2.shape == (3, grid.n_steps + 1)
    assert np.all(chi2 >= 0)


def test_kernel_sampler_matches_marginal_law():
    model = benchmark.two_state_model(1.0, 2.0, 1.0, -1.0)
    rng = np.random.default_rng(13)
    x0 = np.zeros(20000, dtype=np.int64)
    xs = sample_chain_batch_kernel(model, x0, 20, 0.1, rng)
    p_hat = np.mean(xs[:, -1] == 0)
    p_exact = transition_matrix(model, 2.0)[0, 0]
    assert abs(p_hat - p_exact) <= 3 * np.sqrt(p_exact * (1 - p_exact) / 20000)


def test_chi2_at_time_zero_is_static_divergence():
    model = benchmark.four_state_model(0.1, "h3")
    grid = TimeGrid(0.5, 0.01)
    _, dz = sample_paths_batch(model, grid, 17, range(4), prior=MU)
    _, _, chi2, _ = twin_filter_batch(model, MU, NU, dz, grid.dt)
    np.testing.assert_allclose(chi2[:, 0], 0.73125, atol=1e-12)
