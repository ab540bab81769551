"""Exception hierarchy shared by all modules."""


class APMSqueezeError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(APMSqueezeError, ValueError):
    """Vector lengths do not line up."""


class DomainError(APMSqueezeError, ValueError):
    """An input value is outside the domain of an operation (NaN, Inf, negative sqrt)."""


class ConfigError(APMSqueezeError, ValueError):
    pass


class StateError(APMSqueezeError, RuntimeError):
    """Operation called in the wrong phase or before required state exists."""


class DecodeError(APMSqueezeError, ValueError):
    pass
