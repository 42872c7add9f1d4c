"""Exception hierarchy shared by all modules."""


class FtromError(Exception):
    """Base class for every error raised by the package."""


class InvalidArgumentError(FtromError, ValueError):
    pass


class SingularMappingError(FtromError):
    pass


class SolverFailureError(FtromError):
    def __init__(self, message, residual_norm=None):
        super().__init__(message)
        self.residual_norm = residual_norm


class NotFoundError(FtromError):
    pass


class EmptySupportError(FtromError):
    pass


class DegenerateFeatureError(FtromError):
    pass


class FitFailureError(FtromError):
    pass


class RegistrationFailureError(FtromError):
    def __init__(self, message, cells=()):
        super().__init__(message)
        self.cells = list(cells)


class RomFailureError(FtromError):
    pass


class StorageError(FtromError):
    pass


class FormatError(StorageError):
    pass


class VersionError(FormatError):
    pass


class ConfigError(FtromError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
