"""Path simulation and filter integration.

Samples the hidden chain by exact jump times, synthesizes white-noise
observation increments on a uniform grid, and integrates the nonlinear
filter for two priors on the same observation path.

Two filter schemes:
  ZAKAI_SPLIT (default): multiply a one-step prediction by the
    observation likelihood exp(h'dz - |h|^2 dt / 2) and renormalize;
    positivity preserving.
  KS_EULER: explicit Euler on the innovations form of the filter
    equation, with clipping of negatives and renormalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFilter, DimensionMismatch, PriorNotAbsolutelyContinuous
from .model_core import FiniteHmm, as_simplex, transition_matrix

ZAKAI_SPLIT = "zakai_split"
KS_EULER = "ks_euler"

# states where the nu-filter falls below this are dropped from likelihood ratios
RATIO_FLOOR = 1e-12
SIMPLEX_STEP_TOL = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with step dt."""

    T: float
    dt: float

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("T and dt must be positive")
        n = round(self.T / self.dt)
        if n < 1 or abs(n * self.dt - self.T) > 1e-12 * max(1.0, self.T):
            raise ValueError(f"T = {self.T} is not an integer multiple of dt = {self.dt}")

    @property
    def n_steps(self) -> int:
        return round(self.T / self.dt)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class PathBundle:
    """One realization of (X, Z) with twin filter trajectories.

    pi_mu / pi_nu have shape (n_steps + 1, d); gamma_T is the terminal
    likelihood ratio d pi_T^mu / d pi_T^nu, renormalized so that its
    pi_T^nu mean is exactly 1.
    """

    grid: TimeGrid
    x_path: np.ndarray
    dz: np.ndarray
    pi_mu: np.ndarray
    pi_nu: np.ndarray
    gamma_T: np.ndarray
    seed: tuple


def path_rng(master_seed: int, path_index: int) -> np.random.Generator:
    """Deterministic per-path RNG stream, independent of scheduling."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, path_index]))


def sample_ctmc(model: FiniteHmm, prior, grid: TimeGrid, rng: np.random.Generator) -> np.ndarray:
    """Sample the chain by exact exponential holding times, read out on the grid.

    Returns the state index at each of the n_steps + 1 grid points.
    """
    prior = as_simplex(prior, model.d)
    A = model.A
    rates = -np.diag(A)
    x = int(rng.choice(model.d, p=prior))
    jump_times = [0.0]
    states = [x]
    t = 0.0
    while True:
        r = rates[x]
        if r <= 0:
            break
        t += rng.exponential(1.0 / r)
        if t >= grid.T:
            break
        p = A[x].copy()
        p[x] = 0.0
        x = int(rng.choice(model.d, p=p / r))
        jump_times.append(t)
        states.append(x)
    idx = np.searchsorted(np.asarray(jump_times), grid.times, side="right") - 1
    return np.asarray(states)[idx]


def sample_observations(model: FiniteHmm, x_path, grid: TimeGrid,
                        rng: np.random.Generator) -> np.ndarray:
    """Observation increments dZ_k = h(X_{t_k}) dt + sqrt(dt) xi_k, shape (n_steps, m)."""
    x_path = np.asarray(x_path)
    if x_path.shape != (grid.n_steps + 1,):
        raise DimensionMismatch("x_path length does not match the grid")
    noise = rng.standard_normal((grid.n_steps, model.m))
    return model.H[x_path[:-1]] * grid.dt + np.sqrt(grid.dt) * noise


def filter_step(model: FiniteHmm, pi, dz, dt: float, scheme: str = ZAKAI_SPLIT) -> np.ndarray:
    """One filter update from pi given the observation increment dz."""
    pi = as_simplex(pi, model.d)
    dz = np.atleast_1d(np.asarray(dz, dtype=float))
    if dz.shape != (model.m,):
        raise DimensionMismatch(f"dz has shape {dz.shape}, expected ({model.m},)")
    out = _filter_step_batch(model, pi[None, :], dz[None, :], dt, scheme)
    return out[0]


def _filter_step_batch(model: FiniteHmm, pi: np.ndarray, dz: np.ndarray,
                       dt: float, scheme: str = ZAKAI_SPLIT) -> np.ndarray:
    """Vectorized filter update: pi (B, d), dz (B, m) -> (B, d)."""
    H = model.H
    if scheme == ZAKAI_SPLIT:
        # likelihood reweighting of the one-step prediction
        log_psi = dz @ H.T - 0.5 * np.sum(H * H, axis=1) * dt
        pred = pi + dt * (pi @ model.A)
        np.clip(pred, 0.0, None, out=pred)
        sigma = pred * np.exp(log_psi)
    elif scheme == KS_EULER:
        pibar_h = pi @ H  # (B, m)
        innov = dz - pibar_h * dt
        gain = (H[None, :, :] - pibar_h[:, None, :])  # (B, d, m)
        sigma = pi + dt * (pi @ model.A) + pi * np.einsum("bdm,bm->bd", gain, innov)
        np.clip(sigma, 0.0, None, out=sigma)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    norm = sigma.sum(axis=1)
    if np.any(norm <= 1e-300):
        raise DegenerateFilter("filter normalizer underflowed")
    return sigma / norm[:, None]


def filter_trajectory(model: FiniteHmm, pi0, dz: np.ndarray, dt: float,
                      scheme: str = ZAKAI_SPLIT) -> np.ndarray:
    """Integrate the filter over all increments; returns (n_steps + 1, d)."""
    pi0 = as_simplex(pi0, model.d)
    n = dz.shape[0]
    out = np.empty((n + 1, model.d))
    out[0] = pi0
    pi = pi0[None, :]
    for k in range(n):
        pi = _filter_step_batch(model, pi, dz[k][None, :], dt, scheme)
        out[k + 1] = pi[0]
    return out


def likelihood_ratio(pi_mu: np.ndarray, pi_nu: np.ndarray,
                     floor: float = RATIO_FLOOR) -> np.ndarray:
    """gamma = d pi_mu / d pi_nu with the floor policy, renormalized so pi_nu(gamma) = 1.

    States where pi_nu < floor are dropped from the support and gamma set
    to 0 there.
    """
    valid = pi_nu >= floor
    gamma = np.where(valid, pi_mu / np.where(valid, pi_nu, 1.0), 0.0)
    mean = float(np.sum(pi_nu * gamma))
    if mean <= 0:
        raise DegenerateFilter("likelihood ratio has no support")
    return gamma / mean


def run_twin_filters(model: FiniteHmm, mu, nu, grid: TimeGrid,
                     sampling_prior=None, rng: np.random.Generator | None = None,
                     scheme: str = ZAKAI_SPLIT,
                     seed: tuple = ()) -> PathBundle:
    """Simulate one path and integrate both filters on the same observations.

    The chain starts from sampling_prior (default mu); the filters start
    from mu and nu respectively and see the identical increment sequence.
    """
    mu = as_simplex(mu, model.d)
    nu = as_simplex(nu, model.d)
    if np.any((mu > 0) & (nu <= 0)):
        raise PriorNotAbsolutelyContinuous("mu places mass where nu has none")
    if sampling_prior is None:
        sampling_prior = mu
    if rng is None:
        rng = np.random.default_rng()
    x_path = sample_ctmc(model, sampling_prior, grid, rng)
    dz = sample_observations(model, x_path, grid, rng)
    pi_mu = filter_trajectory(model, mu, dz, grid.dt, scheme)
    pi_nu = filter_trajectory(model, nu, dz, grid.dt, scheme)
    gamma_T = likelihood_ratio(pi_mu[-1], pi_nu[-1])
    return PathBundle(grid=grid, x_path=x_path, dz=dz, pi_mu=pi_mu,
                      pi_nu=pi_nu, gamma_T=gamma_T, seed=seed)


def sample_paths_batch(model: FiniteHmm, grid: TimeGrid, master_seed: int,
                       path_indices, prior=None, x0_states=None
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Per-path streams: chain paths and observation increments for many paths.

    Either prior (X0 sampled) or x0_states (X0 forced per path) must be
    given.  Returns (x_paths (B, n+1), dz (B, n, m)); path i depends only
    on (master_seed, path_indices[i]), so results are identical under any
    worker layout.
    """
    path_indices = list(path_indices)
    B = len(path_indices)
    n = grid.n_steps
    x_paths = np.empty((B, n + 1), dtype=np.int64)
    dz = np.empty((B, n, model.m))
    for i, pidx in enumerate(path_indices):
        rng = path_rng(master_seed, int(pidx))
        if x0_states is not None:
            p = np.zeros(model.d)
            p[int(x0_states[i])] = 1.0
        else:
            p = prior
        x_paths[i] = sample_ctmc(model, p, grid, rng)
        dz[i] = sample_observations(model, x_paths[i], grid, rng)
    return x_paths, dz


def sample_chain_batch_kernel(model: FiniteHmm, x0: np.ndarray, n_steps: int,
                              dt: float, rng: np.random.Generator) -> np.ndarray:
    """Vectorized chain sampling via the one-step kernel exp(dt A).

    Exact in law at the grid times; used for wide nested-MC continuation
    batches where a per-path jump loop would dominate the runtime.
    Returns states of shape (B, n_steps + 1).
    """
    P = transition_matrix(model, dt)
    C = np.cumsum(P, axis=1)
    C[:, -1] = 1.0
    B = x0.shape[0]
    out = np.empty((B, n_steps + 1), dtype=np.int64)
    states = np.asarray(x0, dtype=np.int64).copy()
    out[:, 0] = states
    for k in range(n_steps):
        u = rng.random(B)
        states = (u[:, None] > C[states]).sum(axis=1)
        out[:, k + 1] = states
    return out


def twin_filter_batch(model: FiniteHmm, mu, nu, dz: np.ndarray, dt: float,
                      scheme: str = ZAKAI_SPLIT,
                      floor: float = RATIO_FLOOR,
                      record_chi2: bool = True,
                      pi_mu0: np.ndarray | None = None,
                      pi_nu0: np.ndarray | None = None):
    """Integrate both filters for a batch of observation paths.

    dz has shape (B, n, m).  Returns (pi_mu, pi_nu, chi2, floor_hits):
    terminal filter states (B, d) and, when record_chi2, the divergence
    chi2(pi_t^mu | pi_t^nu) at every grid point, shape (B, n + 1).
    """
    B, n, _ = dz.shape
    if pi_mu0 is None:
        pi_mu0 = np.broadcast_to(as_simplex(mu, model.d), (B, model.d))
    if pi_nu0 is None:
        pi_nu0 = np.broadcast_to(as_simplex(nu, model.d), (B, model.d))
    pi_mu = np.array(pi_mu0, dtype=float)
    pi_nu = np.array(pi_nu0, dtype=float)
    chi2 = np.empty((B, n + 1)) if record_chi2 else None
    hits = 0

    def _chi2_row(pm, pn):
        nonlocal hits
        valid = pn >= floor
        hits += int(np.sum((pm > floor) & ~valid))
        val = np.sum(np.where(valid, pm * pm / np.where(valid, pn, 1.0), 0.0), axis=1) - 1.0
        return np.clip(val, 0.0, None)

    if record_chi2:
        chi2[:, 0] = _chi2_row(pi_mu, pi_nu)
    for k in range(n):
        pi_mu = _filter_step_batch(model, pi_mu, dz[:, k], dt, scheme)
        pi_nu = _filter_step_batch(model, pi_nu, dz[:, k], dt, scheme)
        if record_chi2:
            chi2[:, k + 1] = _chi2_row(pi_mu, pi_nu)
    return pi_mu, pi_nu, chi2, hits


def bundle_to_csv(bundle: PathBundle) -> str:
    """Columnar CSV dump of a path bundle (one row per grid point)."""
    d = bundle.pi_mu.shape[1]
    m = bundle.dz.shape[1]
    cols = ["t", "x"] + [f"dz{j}" for j in range(m)] \
        + [f"pi_mu{i}" for i in range(d)] + [f"pi_nu{i}" for i in range(d)]
    lines = [",".join(cols)]
    times = bundle.grid.times
    for k in range(len(times)):
        row = [f"{times[k]:.17g}", str(int(bundle.x_path[k]))]
        if k < bundle.dz.shape[0]:
            row += [f"{v:.17g}" for v in bundle.dz[k]]
        else:
            row += ["" for _ in range(m)]
        row += [f"{v:.17g}" for v in bundle.pi_mu[k]]
        row += [f"{v:.17g}" for v in bundle.pi_nu[k]]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
