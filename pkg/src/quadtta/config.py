"""Resolved-run configuration digests.

Every checkpoint and report embeds a short digest of the fully resolved
configuration that produced it, so files with equal digests are guaranteed
to come from identical settings.
"""

from __future__ import annotations

import hashlib
import json

__all__ = ["config_digest"]


def config_digest(resolved: dict) -> str:
    """16-hex-char digest of a canonical-JSON rendering of the config."""
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
