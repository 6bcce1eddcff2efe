"""Canonical serialization and UTC time helpers.

Every artifact the harness writes is canonical JSON: UTF-8, sorted keys,
two-space indent, LF line endings, trailing newline. Byte-stable output is
what makes manifest hashes and tamper detection meaningful, so all file
emission funnels through this module.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any


def canonical_json(obj: Any) -> str:
    """Serialize *obj* to canonical JSON text."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_canonical(path: str | Path, obj: Any) -> Path:
    """Write *obj* as canonical JSON, creating parent directories."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(canonical_json(obj))
    return target


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def content_hash(obj: Any) -> str:
    """Stable content hash of a JSON-serializable object via its canonical form."""
    return sha256_text(canonical_json(obj))


def parse_utc(value: str | int | float | datetime) -> datetime:
    """Parse an RFC3339 string, unix epoch, or datetime into aware UTC seconds.

    Naive datetimes are taken to be UTC. Sub-second precision is dropped:
    the whole pipeline works at seconds precision.
    """
    if isinstance(value, datetime):
        dt = value
    elif isinstance(value, (int, float)):
        dt = datetime.fromtimestamp(value, tz=timezone.utc)
    else:
        text = value.strip()
        # Python 3.10 fromisoformat rejects the Z suffix.
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).replace(microsecond=0)


def format_utc(value: str | int | float | datetime) -> str:
    """Render as RFC3339 with Z suffix at seconds precision."""
    return parse_utc(value).strftime("%Y-%m-%dT%H:%M:%SZ")


def epoch(value: str | int | float | datetime) -> int:
    """Unix epoch seconds for any accepted time representation."""
    return int(parse_utc(value).timestamp())
