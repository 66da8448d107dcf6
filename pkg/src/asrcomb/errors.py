"""Exception hierarchy shared by all modules."""


class AsrcombError(Exception):
    """Base class for all errors raised by this package."""


class DataError(AsrcombError, ValueError):
    """Invalid input data: parse failures, schema mismatches, bad values.

    ``path`` and ``line`` are filled in when the error can be traced to a
    location in an input file.
    """

    def __init__(self, message, path=None, line=None):
        super().__init__(message)
        self.message = message
        self.path = path
        self.line = line

    def __str__(self):
        if self.path is not None and self.line is not None:
            return f"{self.path}:{self.line}: {self.message}"
        if self.path is not None:
            return f"{self.path}: {self.message}"
        if self.line is not None:
            return f"line {self.line}: {self.message}"
        return self.message
