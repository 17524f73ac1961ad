"""Flat ``key=value`` text configs (one pair per line, ``#`` comments)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

from .core import FormatError


def parse_config(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise FormatError(f"line {lineno}: empty key")
        if key in out:
            raise FormatError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config(path: str | Path) -> dict[str, str]:
    return parse_config(Path(path).read_text())


def format_config(values: Mapping[str, object]) -> str:
    return "".join(f"{key}={_fmt(value)}\n" for key, value in values.items())


def write_config(path: str | Path, values: Mapping[str, object]) -> None:
    Path(path).write_text(format_config(values))


def _fmt(value: object) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def get_float(cfg: Mapping[str, str], key: str, default: float) -> float:
    if key not in cfg:
        return default
    try:
        return float(cfg[key])
    except ValueError:
        raise FormatError(f"{key}: not a number: {cfg[key]!r}") from None


def get_int(cfg: Mapping[str, str], key: str, default: int) -> int:
    if key not in cfg:
        return default
    try:
        return int(cfg[key])
    except ValueError:
        raise FormatError(f"{key}: not an integer: {cfg[key]!r}") from None
