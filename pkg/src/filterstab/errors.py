"""Exception types shared across the package."""


class FilterstabError(Exception):
    """Base class for all package errors."""


class NegativeOffDiagonal(FilterstabError):
    """A rate matrix has a negative off-diagonal entry."""


class RowSumNonZero(FilterstabError):
    """A rate matrix row does not sum to zero."""

    def __init__(self, row: int, residual: float):
        self.row = row
        self.residual = residual
        super().__init__(f"row {row} sums to {residual:.3e}, expected 0")


class DimensionMismatch(FilterstabError):
    """Vector/matrix dimensions are inconsistent with the model."""


class NotInvariantMeasure(FilterstabError):
    """A measure passed where an invariant measure is required is not invariant."""


class ModelIsDetectable(FilterstabError):
    """No undetectable witness exists because the model is detectable."""


class DegenerateFilter(FilterstabError):
    """The filter normalizer underflowed to (numerical) zero."""


class PriorNotAbsolutelyContinuous(FilterstabError):
    """mu places mass on a state where nu has none."""


class AbsoluteContinuityViolated(FilterstabError):
    """chi-square divergence requested for p not absolutely continuous w.r.t. q."""


class WindowEmpty(FilterstabError):
    """No usable points inside the requested fit window."""


class VarianceIndistinguishableFromZero(FilterstabError):
    """A variance ratio was requested but a variance is statistically zero."""


class BudgetExceeded(FilterstabError):
    """Nested Monte Carlo budget cap exceeded."""


class ConfigError(FilterstabError):
    """Invalid or unparseable configuration."""
