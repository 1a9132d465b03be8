"""Exception types shared across modules."""


class ConfigError(ValueError):
    """Invalid configuration or incompatible components."""


class ContractError(ValueError):
    """A call violated an operation's preconditions."""


class DimensionMismatch(ConfigError):
    """Components or files disagree on a latent, channel or tensor size."""
