"""Exception types shared across the package."""


class SvymixError(Exception):
    """Base class for all package errors."""


class ConfigError(SvymixError):
    """A configuration violates one of its invariants."""


class DesignError(SvymixError):
    """A sampling design cannot be drawn as specified."""


class SchemeMismatchError(SvymixError):
    """A weighting scheme was requested on a sample lacking what it needs."""


class EvaluationError(SvymixError):
    """A density or objective evaluation produced a non-finite result."""


class McmcDivergenceError(SvymixError):
    """The sampler accepted a state with a non-finite log density."""
