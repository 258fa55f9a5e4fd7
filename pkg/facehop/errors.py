"""Exception hierarchy shared by the library and the CLI exit-code contract."""


class FaceHopError(Exception):
    exit_code = 1


class ValidationError(FaceHopError, ValueError):
    """Raised when an input violates a shape, range or sample-count requirement."""

    exit_code = 1


class ManifestSchemaError(ValidationError):
    def __init__(self, message: str, path: str = "", line: int = 0):
        location = f"{path}:{line}: " if path else ""
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class UsageError(FaceHopError, RuntimeError):
    exit_code = 1


class DatasetIOError(FaceHopError, OSError):
    exit_code = 2


class CorruptModelError(FaceHopError):
    exit_code = 3


class BadMagicError(CorruptModelError):
    pass


class UnsupportedVersionError(CorruptModelError):
    pass


class TruncatedModelError(CorruptModelError):
    pass


class ChecksumError(CorruptModelError):
    pass
