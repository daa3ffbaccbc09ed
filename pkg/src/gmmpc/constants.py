"""
This module contains constants, which may be set in environment variables.
"""

from __future__ import annotations

import os
from typing import Final

get_environ = os.environ.get


def _get_environ_bool(name: str, default: bool = False) -> bool:
    """Check an environment variable switch.

    Args:
        name: Name of environment variable.
        default: Value when the variable is not set.

    Returns:
        `True` if the env var is "1", otherwise `False`.
    """
    return get_environ(name, "1" if default else "0") == "1"


def _get_environ_int(
    name: str, default: int, minimum: int | None = None, maximum: int | None = None
) -> int:
    """Retrieves an integer environment variable, clamped to an optional range.

    Args:
        name: Name of environment variable.
        default: The value to use if the value is not set, or isn't a valid integer.
        minimum: Optional minimum value.
        maximum: Optional maximum value.

    Returns:
        The integer associated with the environment variable, or the default.
    """
    try:
        value = int(os.environ[name])
    except (KeyError, ValueError):
        return default
    if minimum is not None:
        value = max(minimum, value)
    if maximum is not None:
        value = min(maximum, value)
    return value


ARRANGEMENT_CAP: Final[int] = _get_environ_int(
    "GMMPC_ARRANGEMENT_CAP", 8, minimum=0, maximum=10
)
"""Largest parent and child set the arrangement ("paper") MPC backend will accept."""

LOG_FILE: Final[bool] = _get_environ_bool("GMMPC_LOG_FILE", False)
"""Also write logs to the state directory?"""

DEBUG: Final[bool] = _get_environ_bool("DEBUG", False)
"""Debug flag."""
