"""Exception types raised across the package."""


class MonoSFError(Exception):
    """Base class; ``code`` is the CLI exit status for this failure."""

    code = 1


class ConfigError(MonoSFError, ValueError):
    code = 2


class InvalidLayout(ConfigError):
    pass


class FormatError(MonoSFError, ValueError):
    """A file exists but does not parse."""

    code = 3


class NonPositiveDepth(MonoSFError, ValueError):
    pass


class BehindCamera(MonoSFError, ValueError):
    pass


class InvalidQuantile(MonoSFError, ValueError):
    pass


class InsufficientData(MonoSFError, ValueError):
    code = 3


class ImageTooSmall(MonoSFError, ValueError):
    code = 3


class SizeMismatch(MonoSFError, ValueError):
    code = 3


class InsufficientMatches(MonoSFError, ValueError):
    code = 4


class SolverDiverged(MonoSFError, RuntimeError):
    code = 4


class NotInitialized(MonoSFError, RuntimeError):
    code = 4
