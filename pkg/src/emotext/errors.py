"""Exception types shared across the toolkit."""


class EmotextError(Exception):
    """Base class for all toolkit errors."""


class UsageError(EmotextError):
    """Bad command-line flags or configuration (CLI exit code 1)."""


class DataError(EmotextError):
    """Malformed input data or incompatible artifacts (CLI exit code 2)."""


class NumericError(EmotextError):
    """Numeric failure such as gradient overflow (CLI exit code 3)."""
