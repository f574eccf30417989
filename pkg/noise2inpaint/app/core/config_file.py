"""Flat ``key=value`` run-configuration files.

Keys use dotted section prefixes (``noise.sigma=25``); list items use
indexed keys (``noise.components.0.kind=poisson``); an empty value means
``None``. Lines starting with ``#`` are comments.

Precedence when loading: model defaults < file < overrides.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from noise2inpaint.app.core.errors import ConfigurationError
from noise2inpaint.app.schemas.run import RunConfig

logger = logging.getLogger(__name__)


def parse_config_text(text: str) -> dict[str, str]:
    """Parse config file text into a flat ``{dotted.key: raw value}`` mapping."""
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"line {lineno}: expected key=value, got {raw!r}")
        if key in entries:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value.strip()
    return entries


def flatten(data: Mapping[str, Any], prefix: str = "") -> dict[str, str]:
    """Flatten nested dicts/lists into dotted keys with string values."""
    out: dict[str, str] = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            out.update(flatten(value, f"{name}."))
        elif isinstance(value, list):
            for i, item in enumerate(value):
                if isinstance(item, Mapping):
                    out.update(flatten(item, f"{name}.{i}."))
                else:
                    out[f"{name}.{i}"] = _format_value(item)
        else:
            out[name] = _format_value(value)
    return out


def unflatten(entries: Mapping[str, str]) -> dict[str, Any]:
    """Rebuild the nested structure from dotted keys (inverse of :func:`flatten`)."""
    root: dict[str, Any] = {}
    for key, raw in entries.items():
        parts = key.split(".")
        node = root
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"key {key!r} conflicts with a scalar value for {part!r}")
            node = child
        leaf = parts[-1]
        if isinstance(node.get(leaf), dict):
            raise ConfigurationError(f"key {key!r} conflicts with a nested section")
        node[leaf] = None if raw == "" else raw
    return _listify(root)


def _listify(node: Any) -> Any:
    if not isinstance(node, dict):
        return node
    converted = {k: _listify(v) for k, v in node.items()}
    if converted and all(k.isdigit() for k in converted):
        indices = sorted(int(k) for k in converted)
        if indices != list(range(len(indices))):
            raise ConfigurationError(f"list indices must be contiguous from 0, got {indices}")
        return [converted[str(i)] for i in indices]
    return converted


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def build_run_config(entries: Mapping[str, str]) -> RunConfig:
    try:
        return RunConfig.model_validate(unflatten(entries))
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise ConfigurationError(f"{where}: {first['msg']}") from exc


def load_run_config(
    path: Path | None = None,
    overrides: Mapping[str, str] | None = None,
) -> RunConfig:
    """Load a run configuration from *path* (optional) plus flat *overrides*."""
    entries: dict[str, str] = {}
    if path is not None:
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        entries.update(parse_config_text(path.read_text(encoding="utf-8")))
        logger.debug("Loaded %d config keys from %s", len(entries), path)
    for key, value in (overrides or {}).items():
        # An override of a whole section replaces any finer-grained keys below it
        for existing in [k for k in entries if k.startswith(f"{key}.")]:
            del entries[existing]
        entries[key] = value
    return build_run_config(entries)


def dump_run_config(config: RunConfig) -> str:
    """Serialize *config* to sorted ``key=value`` lines."""
    flat = flatten(config.model_dump(mode="json", by_alias=True))
    return "".join(f"{key}={flat[key]}\n" for key in sorted(flat))
