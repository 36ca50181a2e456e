"""Exception types shared across the planner."""


class ValidationError(ValueError):
    """Input violates a documented precondition (bad shape, config, file)."""


class InstanceTooLarge(ValidationError):
    """Exhaustive oracle asked to solve an instance beyond its size limit."""
