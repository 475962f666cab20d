"""Minimal key/value text format used for configs, plans, and manifests.

One ``key = value`` pair per line, ``#`` starts a comment, keys may be
dotted paths. Values are stored as strings; callers parse types. Output
preserves insertion order so files are byte-stable for a given mapping.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def parse_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def format_text(items: dict[str, str]) -> str:
    lines = []
    for key, value in items.items():
        value = str(value)
        if "\n" in value:
            raise ConfigError(f"key {key!r}: values must be single-line")
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def load(path: str | Path) -> dict[str, str]:
    return parse_text(Path(path).read_text(encoding="utf-8"))


def save(path: str | Path, items: dict[str, str]) -> None:
    Path(path).write_text(format_text(items), encoding="utf-8")
