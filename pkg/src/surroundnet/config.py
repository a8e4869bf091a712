"""``key = value`` run configuration files.

Blank lines and ``#`` comments are ignored.  Keys are the fields of
:class:`~surroundnet.train.TrainConfig`; anything else is an error so typos
never pass silently.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, Mapping

from .train import TrainConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


def _field_types() -> dict[str, type]:
    defaults = TrainConfig.__dataclass_fields__
    return {name: type(f.default) for name, f in defaults.items()}


def parse_value(key: str, raw: str, kind: type) -> Any:
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    types = _field_types()
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = parse_value(key, value, types[key])
    return out


def load_config(path) -> dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def build_train_config(file_values: Mapping[str, Any] | None = None,
                       overrides: Mapping[str, Any] | None = None) -> TrainConfig:
    """File values first, then non-None overrides on top."""
    values = dict(file_values or {})
    unknown = set(overrides or {}) - set(_field_types())
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(value).lower() if isinstance(value, bool) else value}")
    return "\n".join(lines) + "\n"
