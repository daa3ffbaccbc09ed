from contextlib import suppress
from pathlib import Path
from typing import Final

from xdg_base_dirs import xdg_state_home


APP_NAME: Final[str] = "gmmpc"
LOG_NAME: Final[str] = "gmmpc.log"


def _app_dir(base: Path, *parts: str) -> Path:
    """Return (possibly creating) a directory for the app under an XDG base directory."""
    path = base.joinpath(APP_NAME, *parts)
    with suppress(OSError):
        path.mkdir(0o700, exist_ok=True, parents=True)
    return path


def get_log_file() -> Path:
    """Path of the log file, written when `GMMPC_LOG_FILE=1`."""
    return _app_dir(xdg_state_home(), "logs") / LOG_NAME
