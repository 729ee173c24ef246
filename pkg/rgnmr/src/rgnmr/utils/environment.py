# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import os
from dotenv import find_dotenv, load_dotenv

from rgnmr.errors import InvalidArgumentError

load_dotenv(find_dotenv(usecwd=True))


def _int_variable(name: str, default: int, minimum: int) -> int:
    raw = os.environ.get(name, str(default))

    try:
        value = int(raw)
    except ValueError as e:
        raise InvalidArgumentError(f"{name} must be an integer, got {raw}") from e

    if value < minimum:
        raise InvalidArgumentError(f"{name} must be at least {minimum}, got {value}")

    return value


def get_default_seed() -> int:
    """This function returns the fallback seed.

    Returns:
        int: The value of RGNMR_SEED, or 0 when it is not set
    """
    return _int_variable("RGNMR_SEED", 0, 0)


def get_log_level() -> str:
    """This function returns the logging level name for the command line.

    Returns:
        str: The logging level
    """
    return os.environ.get("RGNMR_LOG_LEVEL", "INFO").upper()


def get_default_threads() -> int:
    """This function returns the default number of concurrent sweep trials.

    Returns:
        int: The value of RGNMR_THREADS, or 1
    """
    return _int_variable("RGNMR_THREADS", 1, 1)
