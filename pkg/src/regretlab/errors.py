class ConfigError(ValueError):
    """A configuration or parameter value is invalid."""


class InsufficientDataError(ValueError):
    """Too few usable samples for a fit or estimate."""


class SearchFailure(RuntimeError):
    """A randomized search exhausted its attempt budget."""
