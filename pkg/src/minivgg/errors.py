"""Exception types shared across the package."""


class MiniVGGError(Exception):
    """Base class for all package errors."""


class ShapeError(MiniVGGError, ValueError):
    pass


class ConfigError(MiniVGGError, ValueError):
    pass


class DataError(MiniVGGError, ValueError):
    pass


class FormatError(MiniVGGError, ValueError):
    pass


class IntegrityError(MiniVGGError, ValueError):
    pass


class TrainingDivergedError(MiniVGGError, RuntimeError):
    pass
