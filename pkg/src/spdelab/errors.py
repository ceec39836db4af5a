"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeError(ValueError):
    """Array shapes, grids or norm flavors do not match."""


class HypothesisError(ValueError):
    """Problem data violate the exponent windows or structural hypotheses."""


class InsufficientDataError(ValueError):
    """Too few samples, nodes or replicas for the requested estimate."""


class ContractError(RuntimeError):
    """A required piece of a solution object is missing."""


class DivergenceError(RuntimeError):
    """An iteration failed to converge; carries the iteration trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class PremiseError(ValueError):
    """Samples handed to an inequality check do not satisfy its premise."""


class ConfigError(ValueError):
    """Invalid experiment configuration or unknown identifier."""


class DegenerateProblemError(HypothesisError):
    """No positive local time satisfies the ball and contraction conditions."""
