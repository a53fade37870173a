"""Exception hierarchy shared by every pipeline stage."""


class LegoError(Exception):
    """Base class for pipeline errors."""


class DimensionError(LegoError, ValueError):
    """Shapes of images, latents, kernels or parameters disagree."""


class FormatError(LegoError, ValueError):
    """A tensor or JSON artifact on disk is malformed."""


class ConfigError(LegoError, ValueError):
    """A run configuration is invalid."""


class MissingArtifactError(LegoError, FileNotFoundError):
    """An upstream artifact required by a command does not exist."""


class DivergenceError(LegoError, ArithmeticError):
    """A numerical procedure produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DegenerateClusterError(LegoError, ArithmeticError):
    """An EM component lost all of its responsibility mass."""
