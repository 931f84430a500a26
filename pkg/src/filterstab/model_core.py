"""Finite-state generator algebra.

Rate-matrix validation, carre du champ, the Markov semigroup, invariant
measures, and the classical variance / energy / Poincare machinery for a
chain with generator A.  Functions f: S -> R and measures on S are plain
length-d numpy arrays throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, eigh, lstsq

from .errors import (
    DimensionMismatch,
    NegativeOffDiagonal,
    NotInvariantMeasure,
    RowSumNonZero,
)

# Single rank/zero-test policy: absolute tolerance scaled by matrix norm.
ZERO_TOL = 1e-10
ROW_SUM_TOL = 1e-12
SIMPLEX_TOL = 1e-10


def zero_tol(a: np.ndarray) -> float:
    """Absolute tolerance for 'is zero' checks, scaled by the array norm."""
    scale = np.linalg.norm(np.asarray(a, dtype=float))
    return ZERO_TOL * max(1.0, scale)


@dataclass(frozen=True)
class FiniteHmm:
    """Finite-state HMM (A, H): d x d rate matrix and d x m observation matrix.

    Off-diagonals of A are the non-negative jump rates i -> j; each row of A
    sums to zero.  Column j of H is the j-th observation channel.
    """

    A: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        H = np.asarray(self.H, dtype=float)
        if H.ndim == 1:
            H = H[:, None]
        validate_generator(A)
        if H.shape[0] != A.shape[0]:
            raise DimensionMismatch(
                f"H has {H.shape[0]} rows, A is {A.shape[0]}x{A.shape[0]}")
        if not np.all(np.isfinite(H)):
            raise DimensionMismatch("H has non-finite entries")
        A = A.copy()
        H = H.copy()
        A.setflags(write=False)
        H.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "H", H)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[1]


def validate_generator(A: np.ndarray) -> np.ndarray:
    """Check that A is a valid transition rate matrix and return it.

    Off-diagonal entries must be >= 0 and every row must sum to zero
    (within ROW_SUM_TOL, scaled by the row magnitude).
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"rate matrix must be square, got shape {A.shape}")
    if A.shape[0] < 1:
        raise DimensionMismatch("rate matrix must be at least 1x1")
    if not np.all(np.isfinite(A)):
        raise DimensionMismatch("rate matrix has non-finite entries")
    off = A - np.diag(np.diag(A))
    if np.any(off < 0):
        i, j = np.unravel_index(np.argmin(off), A.shape)
        raise NegativeOffDiagonal(
            f"A[{i},{j}] = {A[i, j]:.6g} < 0")
    sums = A.sum(axis=1)
    scale = np.maximum(np.abs(A).sum(axis=1), 1.0)
    rel = np.abs(sums) / scale
    worst = int(np.argmax(rel))
    if rel[worst] > ROW_SUM_TOL:
        raise RowSumNonZero(worst, float(sums[worst]))
    return A


def as_function(f, d: int) -> np.ndarray:
    """Coerce f to a length-d function vector."""
    f = np.asarray(f, dtype=float)
    if f.shape != (d,):
        raise DimensionMismatch(f"function vector has shape {f.shape}, expected ({d},)")
    if not np.all(np.isfinite(f)):
        raise DimensionMismatch("function vector has non-finite entries")
    return f


def as_simplex(w, d: int, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Coerce w to a probability vector on {1,...,d}."""
    w = np.asarray(w, dtype=float)
    if w.shape != (d,):
        raise DimensionMismatch(f"simplex vector has shape {w.shape}, expected ({d},)")
    if np.any(w < -tol) or abs(w.sum() - 1.0) > tol:
        raise DimensionMismatch(
            f"not a probability vector (min {w.min():.3e}, sum {w.sum():.12f})")
    return np.clip(w, 0.0, None)


def carre_du_champ(model: FiniteHmm, f, g=None) -> np.ndarray:
    """Carre du champ Gamma(f, g) = A(fg) - f*(Ag) - g*(Af), elementwise.

    With g omitted, returns Gamma(f, f) which is entrywise non-negative.
    """
    A = model.A
    f = as_function(f, model.d)
    g = f if g is None else as_function(g, model.d)
    return A @ (f * g) - f * (A @ g) - g * (A @ f)


def semigroup_apply(model: FiniteHmm, t: float, f) -> np.ndarray:
    """Apply the Markov semigroup: (P_t f)(x) = E[f(X_t) | X_0 = x] = exp(tA) f."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    f = as_function(f, model.d)
    return expm(t * model.A) @ f


def transition_matrix(model: FiniteHmm, t: float) -> np.ndarray:
    """Transition probability matrix exp(tA) for time step t >= 0."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    P = expm(t * model.A)
    # expm can return tiny negatives; clean up without disturbing row sums
    P = np.clip(P, 0.0, None)
    return P / P.sum(axis=1, keepdims=True)


def closed_recurrent_classes(A: np.ndarray) -> tuple[list[list[int]], list[int]]:
    """Closed strongly-connected components of the jump digraph.

    Edge i -> j iff A[i, j] > 0.  Returns (classes, transient_states), each
    class sorted, classes ordered by smallest member.
    """
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    adj = A > 0
    np.fill_diagonal(adj, False)

    # Tarjan SCC, iterative
    index = [-1] * d
    low = [0] * d
    on_stack = [False] * d
    stack: list[int] = []
    sccs: list[list[int]] = []
    counter = 0
    for root in range(d):
        if index[root] != -1:
            continue
        work = [(root, iter(np.nonzero(adj[root])[0]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                w = int(w)
                if index[w] == -1:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, iter(np.nonzero(adj[w])[0])))
                    advanced = True
                    break
                elif on_stack[w]:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                low[work[-1][0]] = min(low[work[-1][0]], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                sccs.append(sorted(comp))

    scc_of = {}
    for k, comp in enumerate(sccs):
        for s in comp:
            scc_of[s] = k
    closed = []
    for comp in sccs:
        leaves = False
        for i in comp:
            for j in np.nonzero(adj[i])[0]:
                if scc_of[int(j)] != scc_of[i]:
                    leaves = True
                    break
            if leaves:
                break
        if not leaves:
            closed.append(comp)
    closed.sort(key=lambda c: c[0])
    in_closed = {s for comp in closed for s in comp}
    transient = [s for s in range(d) if s not in in_closed]
    return closed, transient


def _stationary_on_class(A: np.ndarray, cls: list[int]) -> np.ndarray:
    """Stationary distribution of A restricted to a closed class.

    Solves mu^T A|_cls = 0 with the normalization row appended, by
    least squares; robust for nearly-decoupled classes.
    """
    sub = A[np.ix_(cls, cls)]
    k = len(cls)
    M = np.vstack([sub.T, np.ones((1, k))])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    w, *_ = lstsq(M, b)
    w = np.clip(w, 0.0, None)
    return w / w.sum()


def invariant_measures(model: FiniteHmm) -> list[tuple[list[int], np.ndarray]]:
    """One invariant measure per closed recurrent class.

    Returns a list of (class_states, measure) pairs; each measure is a
    probability vector on all of S, supported exactly on its class.
    """
    classes, _ = closed_recurrent_classes(model.A)
    out = []
    for cls in classes:
        w = _stationary_on_class(model.A, cls)
        mu = np.zeros(model.d)
        mu[cls] = w
        out.append((cls, mu))
    return out


def is_invariant(model: FiniteHmm, measure, tol: float = 1e-8) -> bool:
    """Whether measure^T A = 0 within tol (scaled)."""
    mu = as_simplex(measure, model.d)
    res = np.linalg.norm(mu @ model.A)
    return res <= tol * max(1.0, np.linalg.norm(model.A))


def _require_invariant(model: FiniteHmm, measure) -> np.ndarray:
    mu = as_simplex(measure, model.d)
    if not is_invariant(model, mu):
        raise NotInvariantMeasure(
            f"residual ||mu^T A|| = {np.linalg.norm(mu @ model.A):.3e}")
    return mu


def classical_variance(measure, f) -> float:
    """Variance of f under the measure: mu(f^2) - mu(f)^2."""
    mu = np.asarray(measure, dtype=float)
    f = np.asarray(f, dtype=float)
    if mu.shape != f.shape:
        raise DimensionMismatch("measure and function dimensions differ")
    mean = mu @ f
    return float(max(mu @ (f * f) - mean * mean, 0.0))


def classical_energy(model: FiniteHmm, measure, f) -> float:
    """Dirichlet energy mu(Gamma f) for an invariant measure mu.

    For invariant mu this equals -2 <f, Af>_mu; the measure is checked.
    """
    mu = _require_invariant(model, measure)
    f = as_function(f, model.d)
    return float(mu @ carre_du_champ(model, f))


def dissipation_check(model: FiniteHmm, measure, f, t_grid, delta: float = 1e-4) -> float:
    """Max residual of d/dt Var(P_t f) = -Energy(P_t f) on the grid.

    The time derivative is a Richardson-extrapolated central difference
    (steps delta and delta/2), accurate to O(delta^4); one-sided
    differences of the same order are used near t = 0.
    """
    mu = _require_invariant(model, measure)
    f = as_function(f, model.d)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    def var_at(s):
        return classical_variance(mu, semigroup_apply(model, s, f))

    def central(t, h):
        return (var_at(t + h) - var_at(t - h)) / (2 * h)

    def one_sided(t, h):
        return (-3 * var_at(t) + 4 * var_at(t + h) - var_at(t + 2 * h)) / (2 * h)

    worst = 0.0
    for t in t_grid:
        if t >= delta:
            dvar = (4 * central(t, delta / 2) - central(t, delta)) / 3
        else:
            dvar = (4 * one_sided(t, delta / 2) - one_sided(t, delta)) / 3
        ft = semigroup_apply(model, t, f)
        energy = float(mu @ carre_du_champ(model, ft))
        worst = max(worst, abs(dvar + energy))
    return worst


def classical_poincare_constant(model: FiniteHmm, measure) -> float:
    """Sharpest c with Energy(f) >= c * Var(f) over f orthogonal to 1 in L2(mu).

    Restricted to supp(mu).  Computed as the smallest eigenvalue of the
    symmetrized generator in the mu-weighted inner product, i.e. a
    generalized symmetric eigenproblem on the complement of constants.
    """
    mu = _require_invariant(model, measure)
    supp = np.nonzero(mu > ZERO_TOL)[0]
    k = len(supp)
    if k <= 1:
        return 0.0
    A = model.A[np.ix_(supp, supp)]
    classes, transient = closed_recurrent_classes(A)
    if len(classes) != 1 or transient:
        # no spectral gap on the support; the Rayleigh infimum is 0
        return 0.0
    w = mu[supp]
    D = np.diag(w)
    # Energy(f) = f^T S f with S the symmetrized Dirichlet form matrix
    S = -(D @ A + A.T @ D)
    # basis of {f : sum w f = 0} on the support
    Q, _ = np.linalg.qr(np.column_stack([w, np.eye(k)]))
    B = Q[:, 1:k]  # orthonormal complement of w... in Euclidean metric
    Sb = B.T @ S @ B
    Mb = B.T @ D @ B
    vals = eigh(Sb, Mb, eigvals_only=True)
    c = float(vals[0])
    return max(c, 0.0)
