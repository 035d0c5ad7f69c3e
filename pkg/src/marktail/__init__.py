"""Tail exponents of geometrically stopped Markov additive processes.

The core objects are :class:`~marktail.mapmodel.ProcessSpec` (transition,
survival and increment laws) and :func:`~marktail.solver.solve`, which
returns the exponents, the tail constant and the sharp bounds.  The other
modules build on these: comparative statics, Monte Carlo checks, a
regime-switching growth estimator and a heterogeneous-agent economy whose
wealth distribution has a Pareto tail.
"""
from .errors import (MarktailError, NoEquilibriumError, NoSolutionError, NumericalError,
                     ValidationError)
from .mapmodel import (FiniteDiscrete, Gaussian, LognormalGrowth, PointMass, ProcessSpec,
                       ShiftedScaled)
from .solver import ExponentSolution, solve, solve_exponent

__version__ = "0.1.0"

__all__ = [
    "MarktailError", "NoEquilibriumError", "NoSolutionError", "NumericalError",
    "ValidationError", "FiniteDiscrete", "Gaussian", "LognormalGrowth", "PointMass",
    "ProcessSpec", "ShiftedScaled", "ExponentSolution", "solve", "solve_exponent",
    "__version__",
]
