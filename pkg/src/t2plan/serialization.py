"""JSON/CSV helpers shared by the fit modules and the CLI.

Floats go through ``repr`` (Python's shortest round-trip form), so writing and
re-reading a value is lossless and repeated runs produce identical bytes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Mapping

# Execution-only settings: they never change results, so they are left out
# of digests and serialized configs.
EXECUTION_ONLY_KEYS = frozenset({"workers", "threads"})


def config_dict(config: Any) -> dict:
    """A plain dict of a (dataclass) config without execution-only keys."""
    raw = dataclasses.asdict(config) if dataclasses.is_dataclass(config) else dict(config)
    return {k: _plain(v) for k, v in raw.items() if k not in EXECUTION_ONLY_KEYS}


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, list):
        return [_plain(x) for x in v]
    if isinstance(v, Mapping):
        return {k: _plain(x) for k, x in v.items()}
    return v


def config_digest(config: Any) -> str:
    canonical = json.dumps(config_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def atomic_write_text(path: os.PathLike | str, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        # mkstemp creates 0600; use the permissions a plain open() would give.
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
