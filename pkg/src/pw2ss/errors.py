"""Exception hierarchy shared across the toolkit."""


class PW2SSError(Exception):
    """Base class for every error raised by this package."""


class MalformedDocument(PW2SSError, ValueError):
    pass


class EmptyHierarchy(PW2SSError, ValueError):
    pass


class DisjointInputs(PW2SSError, ValueError):
    pass


class EmptyPatch(PW2SSError, ValueError):
    pass


class DegenerateDataset(PW2SSError, ValueError):
    pass


class LengthMismatch(PW2SSError, ValueError):
    pass


class ShapeMismatch(PW2SSError, ValueError):
    pass


class NotScalarLoss(PW2SSError, ValueError):
    pass


class NonFiniteValue(PW2SSError, FloatingPointError):
    pass


class IoFailure(PW2SSError, OSError):
    pass


class VersionMismatch(PW2SSError, ValueError):
    pass


class MissingParameter(PW2SSError, KeyError):
    def __str__(self):
        # KeyError repr-quotes its message; keep it readable.
        return str(self.args[0]) if self.args else ""


class SequenceTooLong(PW2SSError, ValueError):
    pass


class NoMaskableTokens(PW2SSError, ValueError):
    pass


class LayoutTokenQueried(PW2SSError, IndexError):
    pass


class InvalidPair(PW2SSError, ValueError):
    pass


class EmptyIndex(PW2SSError, ValueError):
    pass


class ConfigError(PW2SSError, ValueError):
    pass


class SchemaError(PW2SSError, ValueError):
    """A JSONL record is missing a required field or has the wrong type."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
