"""Output storage rooted at a run directory; every write is atomic."""

from __future__ import annotations

import logging
import os
import tempfile
from pathlib import Path

logger = logging.getLogger(__name__)


class OutputStore:
    """Store files below *root* using temp-and-rename writes."""

    def __init__(self, root: Path | str) -> None:
        self._root = Path(root)
        self._root.mkdir(parents=True, exist_ok=True)

    @property
    def root(self) -> Path:
        return self._root

    def path(self, relative_path: str) -> Path:
        return self._root / relative_path

    def save(self, relative_path: str, data: bytes) -> Path:
        """Persist *data* under *relative_path* and return the full path."""
        dest = self.path(relative_path)
        atomic_write_bytes(dest, data)
        logger.debug("Wrote %s (%d bytes)", dest, len(data))
        return dest

    def save_text(self, relative_path: str, text: str) -> Path:
        return self.save(relative_path, text.encode("utf-8"))

    def read(self, relative_path: str) -> bytes:
        return self.path(relative_path).read_bytes()

    def exists(self, relative_path: str) -> bool:
        return self.path(relative_path).exists()


def atomic_write_bytes(dest: Path, data: bytes) -> None:
    """Write *data* to *dest* through a temporary sibling and ``os.replace``."""
    dest.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{dest.name}.", suffix=".tmp", dir=dest.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_name, dest)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
