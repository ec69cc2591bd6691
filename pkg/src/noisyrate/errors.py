"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SpecError(ValueError):
    """A model, simulation or recipe description is invalid."""


class IntegrationDivergedError(RuntimeError):
    """The network state became non-finite during time stepping."""

    def __init__(self, step: int, realization: int | None = None):
        self.step = step
        self.realization = realization
        where = f" (realization {realization})" if realization is not None else ""
        super().__init__(f"non-finite membrane potential at step {step}{where}")


class IntegrationError(RuntimeError):
    """The moment ODE integrator failed (step rejection cascade or NaN)."""


class MemoryBudgetError(MemoryError):
    """Requested trajectory storage exceeds the configured byte budget."""

    def __init__(self, required: int, budget: int):
        self.required = required
        self.budget = budget
        super().__init__(
            f"full trajectory storage needs {required} bytes, budget is {budget} bytes; "
            "use record_mode='population_stats' or raise the budget"
        )


class RangeError(DomainError):
    """A query falls outside the span of stored data."""
