import numpy as np
import pytest

from filterstab import backward, benchmark
from filterstab.backward import (
    BackwardMapEstimate,
    NestedMcSpec,
    estimate_y0,
    integrated_energy,
    nested_Yt,
    variance_y0,
)
from filterstab.errors import BudgetExceeded, VarianceIndistinguishableFromZero
from filterstab.simulate import TimeGrid

MU = benchmark.MU_DEFAULT
NU = benchmark.NU_DEFAULT
MODEL = benchmark.four_state_model(0.1, "h3")


def test_equal_priors_give_unit_map():
    est = estimate_y0(MODEL, NU, NU, TimeGrid(1.0, 0.02), 30, 0)
    np.testing.assert_allclose(est.y0, 1.0, atol=1e-9)
    assert variance_y0(est) <= 1e-18


def test_short_horizon_recovers_prior_ratio():
    est = estimate_y0(MODEL, MU, NU, TimeGrid(0.002, 0.001), 200, 1)
    np.testing.assert_allclose(est.y0, MU / NU, rtol=0.03, atol=0.02)


def test_filters_keep_their_priors_under_forced_start():
    # the forced X0 conditions the signal only; if the nu-filter were
    # restarted at the forced state, y0 would collapse to 1 for every x
    est = estimate_y0(MODEL, MU, NU, TimeGrid(0.05, 0.01), 60, 2)
    assert est.y0.max() - est.y0.min() > 1.0


def test_y0_nonnegative_and_normalized():
    est = estimate_y0(MODEL, MU, NU, TimeGrid(2.0, 0.02), 150, 3)
    assert np.all(est.y0 >= 0)
    mean, err = backward.nu_mean_y0(est)
    assert abs(mean - 1.0) <= 3 * err


def test_variance_y0_oracle():
    est = BackwardMapEstimate(y0=np.array([1.2, 0.8]), stderr=np.zeros(2),
                              T=1.0, inner_paths=1, nu=np.array([0.5, 0.5]))
    assert abs(variance_y0(est) - 0.04) <= 1e-15


def test_nested_endpoints():
    grid = TimeGrid(1.0, 0.02)
    spec = NestedMcSpec(checkpoint_times=(0.0, 1.0), outer_paths=80, inner_paths=40)
    res = nested_Yt(MODEL, MU, NU, grid, spec, 4)
    # t = T is the raw terminal variance, no inner stage
    vg, vg_err = backward.var_gamma_mc(MODEL, MU, NU, grid, 400, 11)
    rT = res[1]
    assert abs(rT["var"] - vg) <= 3 * np.hypot(rT["stderr"], vg_err)
    # t = 0 agrees with the direct per-state estimate
    est = estimate_y0(MODEL, MU, NU, grid, 200, 12)
    v0, v0_err = backward.variance_y0_debiased(est)
    r0 = res[0]
    assert abs(r0["var"] - v0) <= 3 * np.hypot(r0["stderr"], v0_err)


def test_nested_budget_cap():
    spec = NestedMcSpec(checkpoint_times=(0.0,), outer_paths=10 ** 4,
                        inner_paths=10 ** 4, budget_cap=1e6)
    with pytest.raises(BudgetExceeded):
        nested_Yt(MODEL, MU, NU, TimeGrid(1.0, 0.02), spec, 0)


def test_nested_rejects_off_grid_checkpoint():
    spec = NestedMcSpec(checkpoint_times=(0.013,), outer_paths=5, inner_paths=5)
    with pytest.raises(ValueError):
        nested_Yt(MODEL, MU, NU, TimeGrid(1.0, 0.02), spec, 0)


def test_integrated_energy_needs_endpoints():
    with pytest.raises(ValueError):
        integrated_energy([{"t": 0.5, "var": 0.1, "stderr": 0.01}], 1.0)


def test_rate_bound_degenerate_for_equal_priors():
    with pytest.raises(VarianceIndistinguishableFromZero):
        backward.empirical_rate_bound(MODEL, NU, NU, TimeGrid(1.0, 0.02), 50, 6)


def test_report_schema():
    grid = TimeGrid(1.0, 0.02)
    spec = NestedMcSpec(checkpoint_times=(0.0, 0.5, 1.0), outer_paths=30,
                        inner_paths=30)
    rep = backward.backward_report(MODEL, MU, NU, grid, 100, 8, nested_spec=spec)
    for key in ("y0", "stderr", "var_y0", "var_gammaT", "identity_z",
                "jensen_pass", "checkpoints", "integrated_energy",
                "empirical_rate_bound"):
        assert key in rep
    assert len(rep["checkpoints"]) == 3
    assert rep["jensen_pass"] is True
