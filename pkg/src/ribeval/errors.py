"""Exception types shared across the toolkit."""


class RibevalError(Exception):
    """Base class for all toolkit errors."""


class InputFaultError(RibevalError):
    """Invalid input data or files. The CLI maps this to exit code 2."""


class FormatError(InputFaultError):
    """Malformed file content; messages carry the byte offset of the fault."""


class EmptySummaryError(RibevalError):
    """A summary was requested over an empty record set."""
