"""Exception hierarchy and the process exit codes the CLI maps them to."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INVARIANT = 4


class MatirecError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(MatirecError):
    """Bad, missing, or out-of-bounds configuration (exit code 2)."""

    exit_code = EXIT_CONFIG


class DataError(MatirecError):
    """Malformed or insufficient input data (exit code 3)."""

    exit_code = EXIT_DATA


class InvariantError(MatirecError):
    """An internal invariant was violated; indicates a bug (exit code 4)."""

    exit_code = EXIT_INVARIANT
