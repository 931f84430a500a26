"""Divergence curves and exponential decay rates for mismatched-prior filters.

chi-square divergence between the twin filters, Monte-Carlo averaging of
its time evolution, log-linear rate fitting, and the five-row benchmark
table comparing structural verdicts with fitted decay rates.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import benchmark, structure
from .errors import AbsoluteContinuityViolated, WindowEmpty
from .model_core import FiniteHmm, as_simplex
from .simulate import (
    RATIO_FLOOR,
    TimeGrid,
    ZAKAI_SPLIT,
    sample_paths_batch,
    twin_filter_batch,
)


@dataclass(frozen=True)
class DivergenceCurve:
    """Monte-Carlo mean of chi2(pi_t^mu | pi_t^nu) over a time grid."""

    times: np.ndarray
    mean_chi2: np.ndarray
    stderr: np.ndarray
    n_paths: int
    floor_hits: int

    def to_csv(self) -> str:
        lines = ["t,mean_chi2,stderr,n_paths,floor_hits"]
        for t, m, s in zip(self.times, self.mean_chi2, self.stderr):
            lines.append(
                f"{t:.17g},{m:.17g},{s:.17g},{self.n_paths},{self.floor_hits}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RateFit:
    """Exponential decay rate of a divergence curve from a log-linear fit."""

    rate: float
    intercept: float
    window: tuple[float, float]
    r_squared: float
    n_points: int
    n_dropped: int


@dataclass(frozen=True)
class ExperimentConfig:
    """Full parameter set for one divergence experiment."""

    model: FiniteHmm
    mu: np.ndarray
    nu: np.ndarray
    T: float = 10.0
    dt: float = 0.005
    n_paths: int = 500
    master_seed: int = 0
    sampling_prior: np.ndarray | None = None
    fit_window: tuple[float, float] | None = None
    scheme: str = ZAKAI_SPLIT
    workers: int = 1
    label: str = ""

    def __post_init__(self):
        mu = as_simplex(self.mu, self.model.d)
        nu = as_simplex(self.nu, self.model.d)
        if np.any((mu > 0) & (nu <= 0)):
            raise AbsoluteContinuityViolated("mu places mass where nu has none")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)
        TimeGrid(self.T, self.dt)  # validates

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.dt)


def chi_square(p, q, floor: float = RATIO_FLOOR) -> float:
    """chi2(p | q) = sum_x p(x)^2 / q(x) - 1, requiring p << q up to the floor."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise AbsoluteContinuityViolated("shape mismatch")
    bad = (p > floor) & (q < floor)
    if np.any(bad):
        raise AbsoluteContinuityViolated(
            f"p has mass {p[bad].sum():.3e} where q < {floor:g}")
    valid = q >= floor
    val = float(np.sum(p[valid] ** 2 / q[valid]) - 1.0)
    return max(val, 0.0)


def _chunks(n: int, workers: int) -> list[range]:
    workers = max(1, workers)
    size = (n + workers - 1) // workers
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def mc_divergence_curve(config: ExperimentConfig) -> DivergenceCurve:
    """Average chi2(pi_t^mu | pi_t^nu) over n_paths simulations with X0 ~ mu.

    Deterministic given the master seed: path i uses its own RNG stream,
    and chunks are reduced in path-index order regardless of worker count.
    """
    grid = config.grid
    sampling = config.sampling_prior if config.sampling_prior is not None else config.mu
    sampling = as_simplex(sampling, config.model.d)

    def run_chunk(idx: range):
        x_paths, dz = sample_paths_batch(
            config.model, grid, config.master_seed, idx, prior=sampling)
        _, _, chi2, hits = twin_filter_batch(
            config.model, config.mu, config.nu, dz, grid.dt, config.scheme)
        return chi2, hits

    chunks = _chunks(config.n_paths, config.workers)
    if config.workers <= 1 or len(chunks) == 1:
        results = [run_chunk(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(run_chunk, chunks))
    chi2 = np.vstack([r[0] for r in results])
    hits = sum(r[1] for r in results)
    mean = chi2.mean(axis=0)
    stderr = chi2.std(axis=0, ddof=1) / np.sqrt(config.n_paths) \
        if config.n_paths > 1 else np.zeros_like(mean)
    return DivergenceCurve(times=grid.times, mean_chi2=mean, stderr=stderr,
                           n_paths=config.n_paths, floor_hits=hits)


NOISE_FLOOR = 1e-14


def fit_rate(curve: DivergenceCurve, window: tuple[float, float]) -> RateFit:
    """Least squares of log(mean_chi2) against t on the window; rate = -slope.

    Points with mean_chi2 below the numerical noise floor are dropped and
    counted.  A constant curve fits with rate 0.
    """
    t_lo, t_hi = window
    if not (t_lo < t_hi):
        raise WindowEmpty(f"empty window ({t_lo}, {t_hi})")
    in_win = (curve.times >= t_lo) & (curve.times <= t_hi)
    usable = in_win & (curve.mean_chi2 > NOISE_FLOOR)
    n_dropped = int(np.sum(in_win) - np.sum(usable))
    if np.sum(usable) < 2:
        raise WindowEmpty(
            f"fewer than 2 usable points in ({t_lo}, {t_hi}); {n_dropped} below noise floor")
    t = curve.times[usable]
    y = np.log(curve.mean_chi2[usable])
    slope, intercept = np.polyfit(t, y, 1)
    pred = slope * t + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateFit(rate=float(-slope), intercept=float(intercept),
                   window=(t_lo, t_hi), r_squared=max(0.0, min(1.0, r2)),
                   n_points=int(np.sum(usable)), n_dropped=n_dropped)


def default_fit_window(curve: DivergenceCurve) -> tuple[float, float]:
    """Two-pass window: first fit on [T/2, T] for a rate guess, then start
    the final window at min(max(1, 2/guess), T/2) to skip the transient."""
    T = float(curve.times[-1])
    try:
        guess = fit_rate(curve, (T / 2, T)).rate
    except WindowEmpty:
        guess = 0.0
    t_lo = 1.0 if guess <= 1e-6 else min(max(1.0, 2.0 / guess), T / 2)
    t_lo = min(t_lo, T / 2)
    return (t_lo, T)


def fit_curve(curve: DivergenceCurve,
              window: tuple[float, float] | None = None) -> RateFit:
    if window is None:
        window = default_fit_window(curve)
    return fit_rate(curve, window)


def benchmark_verdict(model: FiniteHmm) -> str:
    """Model-property label for the 4-state benchmark rows."""
    rep = structure.analyze(model)
    if not rep.is_detectable:
        return "Not detectable"
    if rep.is_ergodic:
        h = model.H[:, 0]
        eq = "=" if abs(h[0] - h[2]) < 1e-12 else "!="
        return f"Ergodic with h(1){eq}h(3)"
    if rep.is_observable:
        return "Observable"
    return "Non-ergodic but detectable"


def reproduce_table1(n_paths: int = 500, T: float = 10.0, dt: float = 0.005,
                     master_seed: int = 0, workers: int = 1,
                     scheme: str = ZAKAI_SPLIT,
                     mu=None, nu=None) -> list[dict]:
    """Run the five benchmark (epsilon, h) rows and fit their decay rates.

    Returns one dict per row: epsilon, h_name, verdict, rate, r_squared,
    paper_rate (the published reference value), and the curve itself under
    key "curve".
    """
    mu = benchmark.MU_DEFAULT if mu is None else mu
    nu = benchmark.NU_DEFAULT if nu is None else nu
    rows = []
    for row_idx, (eps, hname, _verdict, ref_rate) in enumerate(benchmark.TABLE_ROWS):
        model = benchmark.four_state_model(eps, hname)
        config = ExperimentConfig(
            model=model, mu=mu, nu=nu, T=T, dt=dt, n_paths=n_paths,
            master_seed=master_seed + 1_000_000 * row_idx,
            scheme=scheme, workers=workers,
            label=f"eps={eps},h={hname}")
        curve = mc_divergence_curve(config)
        fit = fit_curve(curve)
        rows.append({
            "epsilon": eps,
            "h_name": hname,
            "verdict": benchmark_verdict(model),
            "rate": round(fit.rate, 3),
            "rate_raw": fit.rate,
            "r_squared": fit.r_squared,
            "paper_rate": ref_rate,
            "fit_window": list(fit.window),
            "curve": curve,
        })
    return rows


def table_to_json(rows: list[dict]) -> str:
    out = [{k: v for k, v in r.items() if k != "curve"} for r in rows]
    return json.dumps(out, indent=2)
