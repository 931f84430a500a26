"""Monte-Carlo estimation of the backward map and its variance diagnostics.

y0(x) is the conditional mean of the terminal likelihood ratio given the
chain started at x; its variance under the filter prior controls chi2
filter stability.  This module estimates y0 by simulation, estimates the
intermediate conditional means Y_t by nested Monte Carlo, and runs the
executable inequality / identity checks that tie the two together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceeded, VarianceIndistinguishableFromZero
from .model_core import FiniteHmm, as_simplex
from .simulate import (
    RATIO_FLOOR,
    TimeGrid,
    ZAKAI_SPLIT,
    _filter_step_batch,
    likelihood_ratio,
    sample_chain_batch_kernel,
    sample_paths_batch,
    twin_filter_batch,
)


@dataclass(frozen=True)
class BackwardMapEstimate:
    """Per-state MC estimate of the backward map at horizon T."""

    y0: np.ndarray
    stderr: np.ndarray
    T: float
    inner_paths: int
    nu: np.ndarray


@dataclass(frozen=True)
class NestedMcSpec:
    """Budget for the nested conditional-mean estimate."""

    checkpoint_times: tuple
    outer_paths: int = 200
    inner_paths: int = 200
    budget_cap: float = 2e9  # cap on outer * inner * total steps

    def __post_init__(self):
        if self.outer_paths < 1 or self.inner_paths < 1:
            raise ValueError("outer_paths and inner_paths must be >= 1")


def default_checkpoints(grid: TimeGrid) -> tuple:
    """Quarter points of the horizon, snapped onto the grid."""
    n = grid.n_steps
    idx = sorted({int(round(q * n)) for q in (0.0, 0.25, 0.5, 0.75, 1.0)})
    return tuple(float(grid.times[k]) for k in idx)


def _gamma_at_terminal(pi_mu_T: np.ndarray, pi_nu_T: np.ndarray,
                       x_T: np.ndarray) -> np.ndarray:
    """Terminal likelihood ratio evaluated at the realized terminal state."""
    B = pi_mu_T.shape[0]
    valid = pi_nu_T >= RATIO_FLOOR
    gamma = np.where(valid, pi_mu_T / np.where(valid, pi_nu_T, 1.0), 0.0)
    gamma /= np.sum(pi_nu_T * gamma, axis=1, keepdims=True)
    return gamma[np.arange(B), x_T]


def estimate_y0(model: FiniteHmm, mu, nu, grid: TimeGrid, n_per_state: int,
                master_seed: int, scheme: str = ZAKAI_SPLIT) -> BackwardMapEstimate:
    """MC estimate of y0(x) = E[gamma_T(X_T) | X_0 = x] under the nu dynamics.

    The chain is forced to start at x; both filters keep their own priors
    (mu and nu) regardless of the forced state — the conditioning is on
    the signal only.
    """
    mu = as_simplex(mu, model.d)
    nu = as_simplex(nu, model.d)
    d = model.d
    B = d * n_per_state
    x0 = np.repeat(np.arange(d), n_per_state)
    x_paths, dz = sample_paths_batch(model, grid, master_seed, range(B), x0_states=x0)
    pi_mu_T, pi_nu_T, _, _ = twin_filter_batch(
        model, mu, nu, dz, grid.dt, scheme, record_chi2=False)
    vals = _gamma_at_terminal(pi_mu_T, pi_nu_T, x_paths[:, -1]).reshape(d, n_per_state)
    y0 = vals.mean(axis=1)
    stderr = vals.std(axis=1, ddof=1) / np.sqrt(n_per_state) \
        if n_per_state > 1 else np.zeros(d)
    return BackwardMapEstimate(y0=y0, stderr=stderr, T=grid.T,
                               inner_paths=n_per_state, nu=nu)


def variance_y0(est: BackwardMapEstimate, nu=None) -> float:
    """Plug-in variance of y0(X_0) under nu: sum nu(x) (y0(x) - 1)^2."""
    nu = est.nu if nu is None else np.asarray(nu, dtype=float)
    return float(np.sum(nu * (est.y0 - 1.0) ** 2))


def variance_y0_debiased(est: BackwardMapEstimate) -> tuple[float, float]:
    """Variance of y0(X_0) with the per-state MC noise removed, plus stderr.

    The plug-in estimator inflates the variance by sum nu(x) stderr(x)^2;
    subtracting it keeps decay comparisons honest.  The stderr combines
    the delta-method term with the second-order noise term.
    """
    nu, y0, se = est.nu, est.y0, est.stderr
    var = float(np.sum(nu * (y0 - 1.0) ** 2) - np.sum(nu * se ** 2))
    err = float(np.sqrt(np.sum((2 * nu * (y0 - 1.0) * se) ** 2)
                        + 2 * np.sum((nu * se ** 2) ** 2)))
    return var, err


def nu_mean_y0(est: BackwardMapEstimate) -> tuple[float, float]:
    """nu(y0) with stderr; equals 1 in exact arithmetic."""
    mean = float(np.sum(est.nu * est.y0))
    err = float(np.sqrt(np.sum((est.nu * est.stderr) ** 2)))
    return mean, err


def mu_mean_y0(est: BackwardMapEstimate, mu) -> tuple[float, float]:
    mu = np.asarray(mu, dtype=float)
    return float(np.sum(mu * est.y0)), float(np.sqrt(np.sum((mu * est.stderr) ** 2)))


def var_gamma_mc(model: FiniteHmm, mu, nu, grid: TimeGrid, n_paths: int,
                 master_seed: int, scheme: str = ZAKAI_SPLIT) -> tuple[float, float]:
    """MC estimate of var(gamma_T(X_T)) under X_0 ~ nu, with stderr."""
    nu = as_simplex(nu, model.d)
    x_paths, dz = sample_paths_batch(model, grid, master_seed, range(n_paths), prior=nu)
    pi_mu_T, pi_nu_T, _, _ = twin_filter_batch(
        model, mu, nu, dz, grid.dt, scheme, record_chi2=False)
    sq = (_gamma_at_terminal(pi_mu_T, pi_nu_T, x_paths[:, -1]) - 1.0) ** 2
    return float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(n_paths))


def chi2_terminal_mc(model: FiniteHmm, mu, nu, grid: TimeGrid, n_paths: int,
                     master_seed: int, scheme: str = ZAKAI_SPLIT) -> tuple[float, float]:
    """MC mean of chi2(pi_T^mu | pi_T^nu) under X_0 ~ mu, with stderr."""
    mu = as_simplex(mu, model.d)
    x_paths, dz = sample_paths_batch(model, grid, master_seed, range(n_paths), prior=mu)
    pi_mu_T, pi_nu_T, _, _ = twin_filter_batch(
        model, mu, nu, dz, grid.dt, scheme, record_chi2=False)
    valid = pi_nu_T >= RATIO_FLOOR
    vals = np.clip(np.sum(
        np.where(valid, pi_mu_T ** 2 / np.where(valid, pi_nu_T, 1.0), 0.0),
        axis=1) - 1.0, 0.0, None)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_paths))


def jensen_check(model: FiniteHmm, mu, nu, grid: TimeGrid, n_paths: int,
                 master_seed: int) -> tuple[float, float, bool]:
    """Non-expansiveness: var(y0(X_0)) <= var(gamma_T(X_T)) within 3 sigma."""
    est = estimate_y0(model, mu, nu, grid, n_paths, master_seed)
    lhs, lhs_err = variance_y0_debiased(est)
    rhs, rhs_err = var_gamma_mc(model, mu, nu, grid, n_paths, master_seed + 1)
    ok = lhs <= rhs + 3.0 * float(np.hypot(lhs_err, rhs_err))
    return lhs, rhs, ok


def chisq_identity_check(model: FiniteHmm, mu, nu, grid: TimeGrid, n_paths: int,
                         master_seed: int) -> tuple[float, float, float]:
    """Cross-estimator identity: E[chi2 at T] = mu(y0) - 1; returns z-score.

    nu(y0) = 1 holds exactly for the renormalized likelihood ratio, so
    only mu(y0) carries MC error on the right side.
    """
    lhs, lhs_err = chi2_terminal_mc(model, mu, nu, grid, n_paths, master_seed)
    est = estimate_y0(model, mu, nu, grid, n_paths, master_seed + 1)
    m, m_err = mu_mean_y0(est, mu)
    rhs = m - 1.0
    err = float(np.sqrt(lhs_err ** 2 + m_err ** 2))
    z = abs(lhs - rhs) / err if err > 0 else 0.0
    return lhs, rhs, z


def cauchy_schwarz_check(model: FiniteHmm, mu, nu, grid: TimeGrid, n_paths: int,
                         master_seed: int) -> tuple[float, float, bool]:
    """|E chi2|^2 <= var(y0(X_0)) * chi2(mu | nu), with MC slack."""
    from .stability import chi_square

    lhs, lhs_err = chi2_terminal_mc(model, mu, nu, grid, n_paths, master_seed)
    est = estimate_y0(model, mu, nu, grid, n_paths, master_seed + 1)
    vy0 = variance_y0(est)  # plug-in (upward biased) keeps the bound conservative
    nu_w, y0, se = est.nu, est.y0, est.stderr
    vy0_err = float(np.sqrt(np.sum((2 * nu_w * (y0 - 1.0) * se) ** 2)
                            + 2 * np.sum((nu_w * se ** 2) ** 2)))
    static = chi_square(as_simplex(mu, model.d), as_simplex(nu, model.d))
    bound = vy0 * static
    # both sides are MC estimates; combine their relative errors
    rel_sq = (2 * lhs_err / lhs) ** 2 if lhs > 0 else 0.0
    rel_sq += (vy0_err / vy0) ** 2 if vy0 > 0 else 0.0
    ok = lhs ** 2 <= bound * (1.0 + 3.0 * np.sqrt(rel_sq)) + 1e-12
    return lhs ** 2, bound, ok


def nested_Yt(model: FiniteHmm, mu, nu, grid: TimeGrid, spec: NestedMcSpec,
              master_seed: int, scheme: str = ZAKAI_SPLIT) -> list[dict]:
    """Nested-MC variance of Y_t(X_t) at each checkpoint.

    Outer paths fix the observation history and the twin filters up to t;
    inner continuations restart the chain from each state with fresh
    dynamics and observation noise on [t, T] and average gamma_T(X_T).
    The within-state inner sample variance divided by the inner count is
    subtracted from each squared deviation (standard nested-MC debias).
    """
    mu = as_simplex(mu, model.d)
    nu = as_simplex(nu, model.d)
    d = model.d
    n = grid.n_steps
    dt = grid.dt
    times = grid.times
    cp_idx = []
    for t in spec.checkpoint_times:
        k = int(round(t / dt))
        if not (0 <= k <= n) or abs(times[k] - t) > 1e-9:
            raise ValueError(f"checkpoint {t} is not on the grid")
        cp_idx.append(k)
    N, M = spec.outer_paths, spec.inner_paths
    total_inner_steps = sum(n - k for k in cp_idx)
    if N * M * max(total_inner_steps, 1) > spec.budget_cap:
        raise BudgetExceeded(
            f"outer*inner*steps = {N * M * total_inner_steps:.3g} "
            f"exceeds cap {spec.budget_cap:.3g}")

    # outer stage: per-path streams, filters recorded at checkpoints
    x_paths, dz = sample_paths_batch(model, grid, master_seed, range(N), prior=nu)
    pi_mu = np.broadcast_to(mu, (N, d)).copy()
    pi_nu = np.broadcast_to(nu, (N, d)).copy()
    snap_mu = {}
    snap_nu = {}
    want = set(cp_idx)
    if 0 in want:
        snap_mu[0], snap_nu[0] = pi_mu.copy(), pi_nu.copy()
    for k in range(n):
        pi_mu = _filter_step_batch(model, pi_mu, dz[:, k], dt, scheme)
        pi_nu = _filter_step_batch(model, pi_nu, dz[:, k], dt, scheme)
        if (k + 1) in want:
            snap_mu[k + 1], snap_nu[k + 1] = pi_mu.copy(), pi_nu.copy()

    results = []
    for cp_no, k in enumerate(cp_idx):
        t = times[k]
        x_cp = x_paths[:, k]
        if k == n:
            # zero-length continuation: Y_T = gamma_T exactly
            vals = _gamma_at_terminal(snap_mu[k], snap_nu[k], x_cp)
            stats = (vals - 1.0) ** 2
        else:
            rng = np.random.default_rng(
                np.random.SeedSequence([master_seed, 777, cp_no]))
            steps = n - k
            B = N * d * M
            x0 = np.tile(np.repeat(np.arange(d), M), N)
            xs = sample_chain_batch_kernel(model, x0, steps, dt, rng)
            noise = rng.standard_normal((steps, B, model.m))
            p_mu = np.repeat(snap_mu[k], d * M, axis=0)
            p_nu = np.repeat(snap_nu[k], d * M, axis=0)
            for s in range(steps):
                dzi = model.H[xs[:, s]] * dt + np.sqrt(dt) * noise[s]
                p_mu = _filter_step_batch(model, p_mu, dzi, dt, scheme)
                p_nu = _filter_step_batch(model, p_nu, dzi, dt, scheme)
            vals = _gamma_at_terminal(p_mu, p_nu, xs[:, -1]).reshape(N, d, M)
            y_hat = vals.mean(axis=2)
            inner_var = vals.var(axis=2, ddof=1) if M > 1 else np.zeros((N, d))
            rows = np.arange(N)
            stats = (y_hat[rows, x_cp] - 1.0) ** 2 - inner_var[rows, x_cp] / M
        var_t = float(stats.mean())
        stderr = float(stats.std(ddof=1) / np.sqrt(N)) if N > 1 else 0.0
        results.append({"t": float(t), "var": var_t, "stderr": stderr})
    return results


def integrated_energy(nested: list[dict], T: float) -> tuple[float, float]:
    """Total dissipated energy: var at t=T minus var at t=0, with error bar."""
    by_t = {round(r["t"], 12): r for r in nested}
    r0 = by_t.get(0.0)
    rT = by_t.get(round(T, 12))
    if r0 is None or rT is None:
        raise ValueError("nested result must contain checkpoints t=0 and t=T")
    val = rT["var"] - r0["var"]
    err = float(np.hypot(r0["stderr"], rT["stderr"]))
    return float(val), err


def empirical_rate_bound(model: FiniteHmm, mu, nu, grid: TimeGrid, n_paths: int,
                         master_seed: int) -> float:
    """Realized decay exponent (1/T) log(var(gamma_T(X_T)) / var(y0(X_0)))."""
    vg, vg_err = var_gamma_mc(model, mu, nu, grid, n_paths, master_seed)
    est = estimate_y0(model, mu, nu, grid, n_paths, master_seed + 1)
    vy, vy_err = variance_y0_debiased(est)
    if vg <= 3 * vg_err or vy <= 3 * vy_err:
        raise VarianceIndistinguishableFromZero(
            f"var(gamma)={vg:.3g}+-{vg_err:.3g}, var(y0)={vy:.3g}+-{vy_err:.3g}")
    return float(np.log(vg / vy) / grid.T)


def witness_path_check(model: FiniteHmm, rho, f, grid: TimeGrid, n_paths: int,
                       master_seed: int, checkpoint_times,
                       obs_basis: np.ndarray,
                       scheme: str = ZAKAI_SPLIT) -> list[dict]:
    """Path statistic pi_t^rho(f g) for each observable-basis vector g.

    Simulates under X_0 ~ rho with the single filter started at rho and
    reports the MC mean and stderr of pi_t(f g) at each checkpoint.
    """
    rho = as_simplex(rho, model.d)
    f = np.asarray(f, dtype=float)
    n = grid.n_steps
    dt = grid.dt
    cp_idx = sorted({int(round(t / dt)) for t in checkpoint_times})
    _, dz = sample_paths_batch(model, grid, master_seed, range(n_paths), prior=rho)
    pi = np.broadcast_to(rho, (n_paths, model.d)).copy()
    out = []

    def record(k):
        for j in range(obs_basis.shape[1]):
            vals = pi @ (f * obs_basis[:, j])
            out.append({
                "t": float(k * dt), "g_index": j,
                "mean": float(vals.mean()),
                "stderr": float(vals.std(ddof=1) / np.sqrt(n_paths)),
            })

    if 0 in cp_idx:
        record(0)
    for k in range(n):
        pi = _filter_step_batch(model, pi, dz[:, k], dt, scheme)
        if (k + 1) in cp_idx:
            record(k + 1)
    return out


def backward_report(model: FiniteHmm, mu, nu, grid: TimeGrid, n_paths: int,
                    master_seed: int,
                    nested_spec: NestedMcSpec | None = None) -> dict:
    """Bundle of all backward-map diagnostics as a JSON-ready dict."""
    if nested_spec is None:
        nested_spec = NestedMcSpec(checkpoint_times=default_checkpoints(grid))
    est = estimate_y0(model, mu, nu, grid, n_paths, master_seed)
    nmean, nerr = nu_mean_y0(est)
    vy0, vy0_err = variance_y0_debiased(est)
    vg, vg_err = var_gamma_mc(model, mu, nu, grid, n_paths, master_seed + 10)
    lhs, rhs, z = chisq_identity_check(model, mu, nu, grid, n_paths, master_seed + 20)
    jl, jr, jok = jensen_check(model, mu, nu, grid, n_paths, master_seed + 30)
    cs_l, cs_b, cs_ok = cauchy_schwarz_check(model, mu, nu, grid, n_paths,
                                             master_seed + 40)
    nested = nested_Yt(model, mu, nu, grid, nested_spec, master_seed + 50)
    energy, energy_err = integrated_energy(nested, grid.T)
    try:
        rate = empirical_rate_bound(model, mu, nu, grid, n_paths, master_seed + 60)
    except VarianceIndistinguishableFromZero:
        rate = None
    return {
        "y0": est.y0.tolist(),
        "stderr": est.stderr.tolist(),
        "nu_mean_y0": nmean,
        "nu_mean_y0_stderr": nerr,
        "var_y0": vy0,
        "var_y0_stderr": vy0_err,
        "var_gammaT": vg,
        "var_gammaT_stderr": vg_err,
        "identity_lhs": lhs,
        "identity_rhs": rhs,
        "identity_z": z,
        "jensen_lhs": jl,
        "jensen_rhs": jr,
        "jensen_pass": bool(jok),
        "cauchy_schwarz_lhs_sq": cs_l,
        "cauchy_schwarz_bound": cs_b,
        "cauchy_schwarz_pass": bool(cs_ok),
        "checkpoints": nested,
        "integrated_energy": energy,
        "integrated_energy_stderr": energy_err,
        "empirical_rate_bound": rate,
    }
