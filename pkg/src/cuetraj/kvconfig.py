"""Flat ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored.  Keys may use ``-`` or ``_``
interchangeably; they are normalised to ``_``.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path

from .errors import ConfigError


def normalise_key(key: str) -> str:
    return key.strip().replace("-", "_")


def parse(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = normalise_key(key)
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value.strip()
    return out


def load(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file not found: {path}")
    return parse(path.read_text(encoding="utf-8"), str(path))


def dump(path: str | Path, values: dict[str, object]) -> None:
    lines = [f"{k} = {v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _convert(value: str, kind, key: str):
    origin = typing.get_origin(kind)
    if origin is typing.Union or (origin is not None and type(None) in typing.get_args(kind)):
        args = [a for a in typing.get_args(kind) if a is not type(None)]
        if value.lower() in ("none", ""):
            return None
        return _convert(value, args[0], key)
    if origin in (tuple, list):
        args = typing.get_args(kind)
        inner = args[0] if args else str
        parts = [p for p in value.replace(" ", "").split(",") if p]
        return tuple(_convert(p, inner, key) for p in parts)
    try:
        if kind is bool:
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"invalid value for {key}: {value!r}") from exc
    return value


def coerce(cls, values: dict[str, str], strict: bool = True) -> dict[str, object]:
    """Convert string values to the field types of dataclass ``cls``."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    out = {}
    for key, value in values.items():
        key = normalise_key(key)
        if key not in names:
            if strict:
                raise ConfigError(f"unknown option {key!r} for {cls.__name__}")
            continue
        out[key] = _convert(str(value), hints[key], key) if isinstance(value, str) else value
    return out
