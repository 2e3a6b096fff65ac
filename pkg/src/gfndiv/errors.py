"""Exception types shared across the package."""


class GfnError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GfnError, ValueError):
    """Shapes, dimensions or settings that cannot work together."""


class DomainError(GfnError, ValueError):
    """A numerical operation was asked to leave its domain (e.g. log of 0)."""


class UsageError(GfnError, ValueError):
    """An API was called in a state where the call makes no sense."""


class DegenerateBatchError(GfnError, ArithmeticError):
    """Every importance quantity in a batch vanished."""


class CapExceededError(GfnError, RuntimeError):
    """An exhaustive enumeration would exceed the configured cap."""

    def __init__(self, estimate, cap):
        super().__init__(
            f"enumeration refused: about {estimate:.3g} items exceeds cap {cap:.3g}"
        )
        self.estimate = estimate
        self.cap = cap
