"""Structural analysis of an HMM (A, H).

Observable space, null eigenfunctions, ergodic partition, and the
observable / ergodic / detectable predicates, plus construction of the
prior-and-function witness certifying non-detectability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ModelIsDetectable
from .model_core import (
    FiniteHmm,
    closed_recurrent_classes,
    invariant_measures,
)

RANK_TOL = 1e-10


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal basis (d x k, columns) of a subspace of R^d."""

    basis: np.ndarray
    tol: float
    singular_values: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def contains(self, v: np.ndarray, tol: float | None = None) -> bool:
        """Whether v lies in the subspace, by projection residual."""
        v = np.asarray(v, dtype=float)
        tol = self.tol if tol is None else tol
        resid = v - self.basis @ (self.basis.T @ v)
        return np.linalg.norm(resid) <= tol * max(1.0, np.linalg.norm(v))

    def project_residual(self, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=float)
        return float(np.linalg.norm(v - self.basis @ (self.basis.T @ v)))


@dataclass(frozen=True)
class ErgodicDecomposition:
    """Closed recurrent classes, transient states, and per-class invariant measures."""

    recurrent_classes: list[list[int]]
    transient_states: list[int]
    class_measures: list[np.ndarray]


@dataclass(frozen=True)
class StructureReport:
    observable_space: SubspaceBasis
    null_space: SubspaceBasis
    decomposition: ErgodicDecomposition
    is_observable: bool
    is_ergodic: bool
    is_detectable: bool

    def to_json(self) -> str:
        obj = {
            "tol": self.observable_space.tol,
            "observable_dim": self.observable_space.dim,
            "observable_basis": self.observable_space.basis.T.ravel().tolist(),
            "observable_singular_values":
                None if self.observable_space.singular_values is None
                else self.observable_space.singular_values.tolist(),
            "null_dim": self.null_space.dim,
            "null_basis": self.null_space.basis.T.ravel().tolist(),
            "recurrent_classes": self.decomposition.recurrent_classes,
            "transient_states": self.decomposition.transient_states,
            "class_measures": [m.tolist() for m in self.decomposition.class_measures],
            "is_observable": self.is_observable,
            "is_ergodic": self.is_ergodic,
            "is_detectable": self.is_detectable,
        }
        return json.dumps(obj, indent=2)


def _orth(columns: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis of the column span via SVD; rank by sigma >= tol * sigma_max."""
    U, s, _ = np.linalg.svd(columns, full_matrices=False)
    if s.size == 0 or s[0] <= 0:
        return columns[:, :0], s
    rank = int(np.sum(s >= tol * s[0]))
    return U[:, :rank], s


def observable_space(model: FiniteHmm, tol: float = RANK_TOL) -> SubspaceBasis:
    """Smallest subspace containing 1 and closed under g -> Ag and g -> h^j g.

    Built by closure iteration: expand the current basis by A and by each
    diag(H^j), re-orthonormalize, repeat until the dimension stabilizes
    (at most d steps).
    """
    d = model.d
    A = model.A
    B = np.ones((d, 1)) / np.sqrt(d)
    svals = np.array([1.0])
    for _ in range(d + 1):
        blocks = [B, A @ B]
        for j in range(model.m):
            blocks.append(model.H[:, j][:, None] * B)
        newB, svals = _orth(np.hstack(blocks), tol)
        if newB.shape[1] == B.shape[1]:
            B = newB
            break
        B = newB
    return SubspaceBasis(basis=B, tol=tol, singular_values=svals)


def null_eigenfunctions(model: FiniteHmm, tol: float = RANK_TOL) -> SubspaceBasis:
    """Kernel of A: the space of null eigenfunctions {f : Af = 0}."""
    U, s, Vt = np.linalg.svd(model.A)
    smax = s[0] if s.size and s[0] > 0 else 1.0
    null_mask = s <= tol * max(smax, 1.0)
    B = Vt[null_mask].T
    if B.size == 0:
        B = np.zeros((model.d, 0))
    return SubspaceBasis(basis=B, tol=tol)


def ergodic_partition(model: FiniteHmm) -> ErgodicDecomposition:
    """Closed recurrent classes of the jump digraph with their invariant measures."""
    classes, transient = closed_recurrent_classes(model.A)
    measures = [m for _, m in invariant_measures(model)]
    return ErgodicDecomposition(
        recurrent_classes=classes,
        transient_states=transient,
        class_measures=measures,
    )


def is_observable(model: FiniteHmm, tol: float = RANK_TOL) -> bool:
    """Whether the observable space is all of R^d."""
    return observable_space(model, tol).dim == model.d


def is_ergodic(model: FiniteHmm, tol: float = RANK_TOL) -> bool:
    """Whether Af = 0 implies f constant, i.e. ker A is one-dimensional."""
    return null_eigenfunctions(model, tol).dim == 1


def is_detectable(model: FiniteHmm, tol: float = RANK_TOL) -> bool:
    """Whether every null eigenfunction lies in the observable space."""
    O = observable_space(model, tol)
    S0 = null_eigenfunctions(model, tol)
    return all(O.contains(S0.basis[:, j]) for j in range(S0.dim))


def analyze(model: FiniteHmm, tol: float = RANK_TOL) -> StructureReport:
    """Full structural report for (A, H)."""
    O = observable_space(model, tol)
    S0 = null_eigenfunctions(model, tol)
    decomp = ergodic_partition(model)
    obs = O.dim == model.d
    erg = S0.dim == 1
    det = all(O.contains(S0.basis[:, j]) for j in range(S0.dim))
    # individually sufficient conditions
    det = det or obs or erg
    return StructureReport(
        observable_space=O,
        null_space=S0,
        decomposition=decomp,
        is_observable=obs,
        is_ergodic=erg,
        is_detectable=det,
    )


def undetectable_witness(model: FiniteHmm, tol: float = RANK_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Witness (rho, f) certifying non-detectability.

    rho is an equal mixture of two class invariant measures and
    f = 1_{class k} - 1_{class l}, chosen over class pairs (k, l) in
    lexicographic order, taking the first pair whose indicator difference
    falls outside the observable space.  The returned pair satisfies
    rho(f^2) > 0, rho(f) = 0, Af = 0, and rho(f g) = 0 for every g in the
    observable space.

    Raises ModelIsDetectable if the model is detectable.
    """
    if is_detectable(model, tol):
        raise ModelIsDetectable("model is detectable; no witness exists")
    O = observable_space(model, tol)
    decomp = ergodic_partition(model)
    classes = decomp.recurrent_classes
    for k in range(len(classes)):
        for l in range(k + 1, len(classes)):
            f = np.zeros(model.d)
            f[classes[k]] = 1.0
            f[classes[l]] = -1.0
            if O.contains(f):
                continue
            rho = 0.5 * decomp.class_measures[k] + 0.5 * decomp.class_measures[l]
            resid = max(
                abs(rho @ (f * O.basis[:, j])) for j in range(O.dim))
            if resid <= 1e-10:
                return rho, f
    raise ModelIsDetectable(
        "no witness pair found despite non-detectability; "
        "model structure outside the two-class construction")
