"""
Backing key-value store with resolve-based conflict resolution.

Optionally backed by an append-only log of newline-delimited canonical JSON
versions, replayed on start-up.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

from pydantic import ValidationError

from causalmesh.errors import NotFoundError
from causalmesh.services.core.versions import Key, Version, canonical_json, resolve

logger = logging.getLogger(__name__)


class VersionedStore:
    def __init__(self, log_path: Optional[Union[str, Path]] = None, keep_history: bool = False):
        self._data: Dict[Key, Version] = {}
        self.history: Optional[List[Version]] = [] if keep_history else None
        self.reads = 0
        self._log_path = Path(log_path) if log_path else None
        if self._log_path is not None and self._log_path.exists():
            self._replay()

    def _replay(self) -> None:
        replayed = 0
        with open(self._log_path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    self._apply(Version.model_validate_json(line))
                    replayed += 1
                except ValidationError:
                    # A torn final line from an interrupted append is skipped.
                    logger.warning("skipping bad store log line %d in %s", lineno, self._log_path)
        logger.info("replayed %d versions from %s", replayed, self._log_path)

    def _apply(self, version: Version) -> None:
        existing = self._data.get(version.key)
        self._data[version.key] = version if existing is None else resolve(existing, version)

    def put(self, version: Version) -> None:
        self._apply(version)
        if self.history is not None:
            self.history.append(version)
        if self._log_path is not None:
            with open(self._log_path, "a", encoding="utf-8") as f:
                f.write(canonical_json(version))
                f.write("\n")

    def get(self, key: Key) -> Version:
        self.reads += 1
        try:
            return self._data[key]
        except KeyError:
            raise NotFoundError(key) from None

    def snapshot(self) -> Dict[Key, Version]:
        # Versions are never mutated in place; the copy may share them.
        return dict(self._data)

    def __contains__(self, key: Key) -> bool:
        return key in self._data

    def __len__(self) -> int:
        return len(self._data)


def store_put(st: VersionedStore, v: Version) -> None:
    st.put(v)


def store_get(st: VersionedStore, key: Key) -> Version:
    return st.get(key)


def store_snapshot(st: VersionedStore) -> Dict[Key, Version]:
    return st.snapshot()
