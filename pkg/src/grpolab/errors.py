"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside an operation's domain (terminal state, bad token, ...)."""


class ResourceError(RuntimeError):
    """An exhaustive computation would exceed its configured budget."""


class ConfigError(ValueError):
    """A configuration value failed validation.

    ``field`` carries the dotted path of the offending key when known.
    """

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class DegenerateTaskError(ValueError):
    """The task gives no usable signal (e.g. zero expected group std)."""


class NumericAbort(FloatingPointError):
    """Parameters became non-finite during training; ``log`` holds the partial run."""

    def __init__(self, message: str, log=None):
        self.log = log
        super().__init__(message)
