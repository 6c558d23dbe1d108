class ConfigurationError(ValueError):
    """Invalid or inconsistent experiment/policy configuration."""


class ParseError(ValueError):
    """Input data does not match the expected layout."""


class InvariantViolation(AssertionError):
    """A simulator invariant (drift exactness, regret sign, ...) failed."""
