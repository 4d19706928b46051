"""Exception types raised across the package."""


class AffsegError(Exception):
    """Base class for all data errors raised by this package."""


class FormatError(AffsegError, ValueError):
    """A file could not be parsed.

    ``line`` is 1-based for text content, ``offset`` is a byte offset for
    binary content; either may be None.
    """

    def __init__(self, message, *, path=None, line=None, offset=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.path = path
        self.line = line
        self.offset = offset


class UnsupportedFaceError(FormatError):
    """A mesh face is not a triangle."""


class AlignmentError(AffsegError, ValueError):
    """Per-vertex records do not line up with the mesh."""


class OutOfExtentError(AffsegError, ValueError):
    """Points fall outside the voxel grid extent."""

    def __init__(self, message, axis):
        super().__init__(message)
        self.axis = axis


class ValidationError(AffsegError, ValueError):
    """A value is outside its permitted range."""


class ConfigError(AffsegError, ValueError):
    """Invalid or inconsistent configuration."""
