"""Utility functions for configuration key handling."""

import json
import re
from pathlib import Path
from typing import Any

from .errors import ConfigError

# flag spelling -> field name where the two differ beyond punctuation
_FLAG_ALIASES = {
    "nq": "n_q",
    "nQ": "n_q",
    "config": "config_path",
    "out": "output",
}


def sanitize_key(name: str) -> str:
    """Convert a flag or JSON key to a Python identifier.

    Args:
        name: The key (e.g., "--t-final").

    Returns:
        The identifier (e.g., "t_final").
    """
    stripped = name.lstrip("-")
    key = re.sub(r"[^a-zA-Z0-9_]", "_", stripped)
    return _FLAG_ALIASES.get(key, key)


def normalize_keys(values: dict[str, Any]) -> dict[str, Any]:
    """Sanitize every key of a flat mapping.

    Raises:
        ConfigError: If two keys collapse onto the same identifier.
    """
    result: dict[str, Any] = {}
    for raw, value in values.items():
        key = sanitize_key(raw)
        if key in result:
            raise ConfigError(f"Duplicate configuration key {raw!r}")
        result[key] = value
    return result


def merge_overrides(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Lay non-``None`` overrides over a base mapping; overrides win."""
    merged = dict(base)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def read_flat_json(path: str | Path) -> dict[str, Any]:
    """Read a JSON object with scalar or list values.

    Args:
        path: File to read.

    Returns:
        The decoded mapping.

    Raises:
        ConfigError: If the file cannot be read or is not a flat object.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
        data = json.loads(text)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read configuration {str(path)!r}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Configuration {str(path)!r} must be a JSON object")
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(f"Configuration key {key!r} must not be nested")
    return data
