"""Error hierarchy.

Four base classes map onto the CLI exit codes: usage 1, config 2, data 3,
backend 4. Concrete errors live next to the code that raises them and
inherit from one of these.
"""


class IclnerError(Exception):
    """Base for everything this package raises on purpose."""


class UsageError(IclnerError):
    """Bad command line. Exit code 1."""


class ConfigError(IclnerError):
    """Bad or inconsistent configuration. Exit code 2."""


class DataError(IclnerError):
    """Bad input data: corpora, embeddings, schemas, prediction files. Exit code 3."""


class BackendError(IclnerError):
    """Completion backend failure. Exit code 4."""


EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BACKEND = 4


def exit_code_for(exc: BaseException) -> int:
    """Exit code for an exception, 1 for anything unclassified."""
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, BackendError):
        return EXIT_BACKEND
    return EXIT_USAGE
