"""Canonical JSON: sorted keys, no insignificant whitespace, ASCII only.

Snapshots, event-log lines and wire frames all go through here so that
equal values always serialize to equal bytes.
"""

from __future__ import annotations

import json
from typing import Any


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def dumps_bytes(obj: Any) -> bytes:
    return dumps(obj).encode("utf-8")
