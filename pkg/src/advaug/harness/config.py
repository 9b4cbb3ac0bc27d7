"""Flat ``key = value`` experiment files with ``include`` support.

Example::

    include = base.cfg
    dataset = mnist
    subset_size = 550
    snapshot_epochs = 50, 100

Later keys override earlier ones; a file's own keys override those of the
files it includes. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

from pathlib import Path

from ..errors import ConfigError

MAX_INCLUDE_DEPTH = 16


def parse_config(path, _depth=0, _seen=None) -> dict:
    path = Path(path).resolve()
    seen = set(_seen or ())
    if path in seen or _depth > MAX_INCLUDE_DEPTH:
        raise ConfigError(f"include cycle at {path}")
    seen.add(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "include":
            out.update(parse_config(path.parent / value, _depth + 1, seen))
        else:
            out[key] = value
    return out


def merge(config: dict, overrides: dict) -> dict:
    """Overlay non-None overrides on a config."""
    merged = dict(config)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def as_int_list(value) -> tuple:
    if value in (None, ""):
        return ()
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    return tuple(int(v) for v in str(value).replace(",", " ").split())


def as_str_list(value) -> tuple:
    if value in (None, ""):
        return ()
    if isinstance(value, (list, tuple)):
        return tuple(str(v) for v in value)
    return tuple(v for v in str(value).replace(",", " ").split())
