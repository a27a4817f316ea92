"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes, so raising the right class
matters more than the message text: bad or malformed input data raises
DataError, diverging or non-finite computations raise NumericsError, and
anything else is a plain ValueError/OSError from the offending call.
"""


class SpikedecError(Exception):
    """Base class for package-specific failures."""


class DataError(SpikedecError):
    """Malformed, truncated, or inconsistent input data."""


class NumericsError(SpikedecError):
    """A computation produced non-finite or otherwise unusable numbers."""
