"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
I/O and file-format problems with 3, violated contracts with 4.
"""


class CfdiffError(Exception):
    exit_code = 4


class ConfigError(CfdiffError, ValueError):
    exit_code = 2


class ContractError(CfdiffError, ValueError):
    """A precondition of an operation was violated."""

    exit_code = 4


class ShapeError(ContractError):
    pass


class RangeError(ContractError):
    pass


class StaleTapeError(ContractError, RuntimeError):
    pass


class FormatError(CfdiffError):
    exit_code = 3


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class MaskValueError(FormatError):
    pass


class EmptyMaskError(ContractError):
    pass


class DataError(CfdiffError):
    """Missing or unusable data on disk."""

    exit_code = 3
