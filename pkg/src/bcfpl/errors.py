"""Exception hierarchy.

Everything raised on bad data or degenerate input derives from
:class:`BcfplError`; the CLI maps those to exit code 1.
"""


class BcfplError(Exception):
    pass


class DomainError(BcfplError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ShapeError(BcfplError, ValueError):
    pass


class ImageError(BcfplError):
    pass


class UnsupportedFormatError(ImageError):
    pass


class TruncatedFileError(ImageError):
    pass


class ImageIOError(ImageError, OSError):
    pass


class DataError(BcfplError):
    """Problems building manifests or reading samples."""


class EmptyManifestError(DataError):
    pass


class LabelFileError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateBatchError(BcfplError, ValueError):
    pass


class StaleCacheError(BcfplError, RuntimeError):
    pass


class DegenerateInputError(BcfplError, ValueError):
    pass


class CheckpointError(BcfplError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ArchitectureMismatchError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class SweepError(BcfplError):
    pass
