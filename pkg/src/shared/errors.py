"""Exception types raised across the simulators."""

from typing import Optional


class ParameterError(ValueError):
    """A model parameter lies outside its admissible range."""


class StructuralError(ValueError):
    """A graph or tree state is internally inconsistent."""


class DomainError(ValueError):
    """The operation is undefined for this parameter regime."""


class ConvergenceError(RuntimeError):
    """An iterative numerical method failed to converge."""

    def __init__(
        self,
        message: str,
        last_iterates: Optional[tuple[float, float]] = None,
    ):
        super().__init__(message)
        self.last_iterates = last_iterates


class SimulationBudgetError(RuntimeError):
    """A branching simulation exceeded its live-particle budget."""

    def __init__(self, message: str, particles: int, budget: int):
        super().__init__(message)
        self.particles = particles
        self.budget = budget
