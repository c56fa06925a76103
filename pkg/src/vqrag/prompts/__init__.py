"""Versioned prompt templates shipped as package data.

Templates contain bracketed substitution slots (for example ``[question]``);
everything outside the slots is fixed text that golden tests pin byte-wise.
"""

from __future__ import annotations

import hashlib
from importlib import resources

ASSET_NAMES = (
    "decoupling",
    "global",
    "local_single",
    "local_pair",
    "aggregate",
    "answer_single",
    "answer_pair",
)

_cache: dict[str, str] = {}


def load(name: str) -> str:
    """Return the template text for one of ASSET_NAMES (trailing newline stripped)."""
    if name not in ASSET_NAMES:
        raise KeyError(f"unknown prompt asset: {name!r}")
    if name not in _cache:
        text = (
            resources.files(__package__).joinpath(f"assets/{name}.txt").read_text("utf-8")
        )
        _cache[name] = text.rstrip("\n")
    return _cache[name]


def digest(name: str) -> str:
    """Stable content digest of one template, used in cache keys."""
    return hashlib.sha256(load(name).encode("utf-8")).hexdigest()


def all_digests() -> dict[str, str]:
    return {name: digest(name) for name in ASSET_NAMES}


def render(template: str, slots: dict[str, str]) -> str:
    """Fill bracketed slots; raises if a slot in the mapping is absent from the template."""
    out = template
    for key, value in slots.items():
        marker = f"[{key}]"
        if marker not in out:
            raise KeyError(f"slot {marker} not present in template")
        out = out.replace(marker, value)
    return out
