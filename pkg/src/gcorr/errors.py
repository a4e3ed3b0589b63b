"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A parameter or configuration is invalid."""


class InputError(ValueError):
    """Input data violates an operation's preconditions."""


class GenerationError(RuntimeError):
    """A synthetic scene could not be generated within the attempt budget."""


class InvariantError(RuntimeError):
    """An internal post-condition failed; indicates a bug, not bad input."""
