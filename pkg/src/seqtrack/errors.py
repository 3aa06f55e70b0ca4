"""Exception types raised across the package."""


class StructureError(ValueError):
    """Array shapes or sizes do not fit together."""


class NonErgodicError(ValueError):
    """The chain has no unique stationary distribution."""


class ConvergenceError(RuntimeError):
    """An iterative or adaptive numerical routine missed its tolerance."""


class UsageError(RuntimeError):
    """An object was used out of order (e.g. stepping a stopped test)."""


class ConfigError(ValueError):
    """An experiment configuration is invalid."""
