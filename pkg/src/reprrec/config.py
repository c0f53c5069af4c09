"""Flat ``key = value`` files and seed derivation."""
from __future__ import annotations

import hashlib
from typing import IO


class ConfigError(ValueError):
    pass


def read_kv(source: IO[str] | str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Order is kept."""
    text = source if isinstance(source, str) else source.read()
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def write_kv(items, sink: IO[str]) -> None:
    for key, value in items:
        sink.write(f"{key} = {value}\n")


def stage_seed(seed: int, stage: str) -> int:
    """Derive an independent 32-bit seed for a named pipeline stage.

    ``sha256(f"{seed}:{stage}")`` truncated to its first four bytes, so
    re-running a single stage reproduces the seed it saw in a full run.
    """
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")
