"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid model, experiment or solver parameters."""


class SizeError(ValueError):
    """A lattice or enumeration window is too small or too large for the request."""
