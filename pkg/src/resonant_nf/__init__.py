"""Resonant normal forms and periodic-orbit continuation near completely resonant tori."""
from .ftseries import (FTSeries, LieGenerator, average_q1, evaluate, lie_derivative,
                       lie_series_apply, multiply, partial_derivative, poisson_bracket,
                       substitute_parameter_diagonal, weighted_norm)

__version__ = "0.1.0"

__all__ = [
    "FTSeries", "LieGenerator", "average_q1", "evaluate", "lie_derivative", "lie_series_apply",
    "multiply", "partial_derivative", "poisson_bracket", "substitute_parameter_diagonal",
    "weighted_norm",
]
