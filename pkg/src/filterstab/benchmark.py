"""Built-in benchmark model: a 4-state chain with a tunable mixing rate.

Two 2-state blocks with rates (1, 2); epsilon couples states 2 and 3.
With epsilon = 0 the blocks {1,2} and {3,4} are separate closed classes;
with epsilon > 0 the chain is ergodic.  Three observation functions h1,
h2, h3 probe different observability structure.
"""

from __future__ import annotations

import numpy as np

from .model_core import FiniteHmm

H_CHOICES = {
    "h1": np.array([2.0, 0.0, 2.0, 0.0]),
    "h2": np.array([2.0, 0.0, 0.0, 0.0]),
    "h3": np.array([2.0, 0.0, -2.0, 0.0]),
}

# default prior pair (true prior, filter prior) for the benchmark runs
MU_DEFAULT = np.array([0.25, 0.40, 0.30, 0.05])
NU_DEFAULT = np.array([0.1, 0.2, 0.3, 0.4])

# benchmark rows: (epsilon, h name, expected verdict, reference decay rate)
TABLE_ROWS = [
    (0.0, "h1", "Not detectable", 0.0),
    (0.0, "h2", "Non-ergodic but detectable", 0.075),
    (0.0, "h3", "Observable", 0.155),
    (0.1, "h1", "Ergodic with h(1)=h(3)", 0.196),
    (0.1, "h3", "Ergodic with h(1)!=h(3)", 0.412),
]


def rate_matrix(epsilon: float) -> np.ndarray:
    """4-state rate matrix: two (1,2)-rate blocks coupled at rate epsilon."""
    base = np.array([
        [-1.0, 1.0, 0.0, 0.0],
        [2.0, -2.0, 0.0, 0.0],
        [0.0, 0.0, -1.0, 1.0],
        [0.0, 0.0, 2.0, -2.0],
    ])
    coupling = np.array([
        [0.0, 0.0, 0.0, 0.0],
        [0.0, -1.0, 1.0, 0.0],
        [0.0, 1.0, -1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
    ])
    return base + epsilon * coupling


def four_state_model(epsilon: float, h: str | np.ndarray = "h1") -> FiniteHmm:
    """Benchmark HMM with mixing rate epsilon and observation channel h."""
    if isinstance(h, str):
        h = H_CHOICES[h]
    return FiniteHmm(A=rate_matrix(epsilon), H=np.asarray(h, dtype=float))


def two_state_model(lam12: float, lam21: float, h1: float, h2: float) -> FiniteHmm:
    """2-state HMM with jump rates lam12, lam21 and scalar observations."""
    A = np.array([[-lam12, lam12], [lam21, -lam21]])
    return FiniteHmm(A=A, H=np.array([h1, h2]))
