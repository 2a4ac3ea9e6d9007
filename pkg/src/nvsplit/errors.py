"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A model parameter violates one of its constraints."""


class DomainError(ValueError):
    """A state lies outside the domain where a vector field is defined."""


class IntegrationError(RuntimeError):
    """The numerical ODE solver could not reach the requested time."""
