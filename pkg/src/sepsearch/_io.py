import os
import tempfile
from pathlib import Path

from .errors import IoFailure


def atomic_write(path, data, text=False):
    """Write ``data`` to ``path`` via a sibling temp file and ``os.replace``.

    A crash mid-write leaves at most a stray temp file, never a truncated
    destination.
    """
    path = Path(path)
    if text:
        data = data.encode("utf-8")
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
