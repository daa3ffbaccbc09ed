import json
import os
from pathlib import Path
import tempfile


class AtomicWriteError(Exception):
    """An atomic write failed."""


def write(path: Path | str, content: str) -> None:
    """Write a text file so readers see either the old or the new contents.

    Args:
        path: Destination path.
        content: Content to write.

    Raises:
        AtomicWriteError: If the file couldn't be written.
    """
    path = Path(path).absolute()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(
            mode="w",
            encoding="utf-8",
            newline="\n",
            delete=False,
            dir=path.parent,
            prefix=f".{path.name}_tmp_",
        ) as temporary_file:
            temporary_file.write(content)
            temp_name = temporary_file.name
    except OSError as error:
        raise AtomicWriteError(
            f"Failed to write {str(path)!r}; error creating temporary file: {error}"
        ) from None

    try:
        os.replace(temp_name, path)
    except OSError as error:
        raise AtomicWriteError(f"Failed to write {str(path)!r}; {error}") from None


def dumps(data: object) -> str:
    """Encode JSON in a stable form (sorted keys), so identical data gives identical bytes."""
    return json.dumps(data, indent=4, sort_keys=True, separators=(",", ": "))


def dumps_line(data: object) -> str:
    """Encode JSON on a single line, with sorted keys."""
    return json.dumps(data, sort_keys=True, separators=(", ", ": "))


def write_json(path: Path | str, data: object) -> None:
    """Atomically write a JSON document."""
    write(path, dumps(data) + "\n")


def write_json_lines(path: Path | str, records: list[dict[str, object]]) -> None:
    """Atomically write a JSON-lines file, one compact record per line."""
    write(path, "".join(dumps_line(record) + "\n" for record in records))
