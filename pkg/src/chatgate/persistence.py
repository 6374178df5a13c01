"""Small file-store helpers: append-only line logs and atomic JSON writes."""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Any, Iterator


class StorageUnavailable(Exception):
    """A backing store could not be written or read."""


class AppendOnlyLog:
    """One JSON record per line, appended with a single-writer lock.

    Records are durable per append (open/write/close); the file is the source
    of truth and can be replayed from empty to rebuild any derived state.
    """

    def __init__(self, path: str | os.PathLike) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
        except OSError:
            pass  # surfaces as StorageUnavailable on the first append

    def append(self, record: dict[str, Any]) -> None:
        line = json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        with self._lock:
            try:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
            except OSError as exc:
                raise StorageUnavailable(f"cannot append to {self.path}: {exc}") from exc

    def replay(self) -> Iterator[dict[str, Any]]:
        try:
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        yield json.loads(line)
        except FileNotFoundError:
            return
        except OSError as exc:
            raise StorageUnavailable(f"cannot read {self.path}: {exc}") from exc


def atomic_write_json(path: str | os.PathLike, payload: Any) -> None:
    """Write JSON via a temp file and rename so readers never see a torn file."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, ensure_ascii=False)
        os.replace(tmp, path)
    except OSError as exc:
        raise StorageUnavailable(f"cannot write {path}: {exc}") from exc


def read_json(path: str | os.PathLike, default: Any = None) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        return default
    except OSError as exc:
        raise StorageUnavailable(f"cannot read {path}: {exc}") from exc
