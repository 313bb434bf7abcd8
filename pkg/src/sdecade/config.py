"""Flat key-value experiment configuration.

Config files are plain text: one `section.key = value` per line, `#`
comments, blank lines ignored. Values stay strings until a typed getter
parses them, so parse -> serialize -> parse is the identity. Vectors
are comma-separated; matrices separate rows with semicolons.

Every random quantity must name its seed explicitly in the config --
there are no entropy-based defaults, rerunning a config byte-reproduces
its outputs.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


class ConfigError(Exception):
    """Malformed, incomplete, or inconsistent configuration."""


_REQUIRED = object()


def parse_config_text(text: str) -> dict:
    """Parse config text into an ordered {key: raw-string-value} dict."""
    entries: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


def serialize_config(entries: dict) -> str:
    """Render entries back to config text (inverse of parse_config_text)."""
    return "".join(f"{key} = {value}\n" for key, value in entries.items())


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed config entries plus the directory for resolving file paths."""

    entries: dict
    base_dir: str = "."

    @classmethod
    def from_text(cls, text: str, base_dir: str = ".") -> "ExperimentConfig":
        return cls(parse_config_text(text), base_dir)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as handle:
                text = handle.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        return cls.from_text(text, os.path.dirname(os.path.abspath(path)))

    def has(self, key: str) -> bool:
        return key in self.entries

    def _raw(self, key: str, default):
        if key in self.entries:
            return self.entries[key]
        if default is _REQUIRED:
            raise ConfigError(f"missing required config key {key!r}")
        return default

    def get_str(self, key: str, default=_REQUIRED) -> str:
        value = self._raw(key, default)
        return value if isinstance(value, str) else value

    def get_choice(self, key: str, options, default=_REQUIRED) -> str:
        value = self.get_str(key, default)
        if value not in options:
            raise ConfigError(
                f"config key {key!r} must be one of {sorted(options)}, got {value!r}"
            )
        return value

    def get_int(self, key: str, default=_REQUIRED) -> int:
        value = self._raw(key, default)
        if not isinstance(value, str):
            return value
        try:
            return int(value, 0)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: not an integer: {value!r}") from exc

    def get_float(self, key: str, default=_REQUIRED) -> float:
        value = self._raw(key, default)
        if not isinstance(value, str):
            return value
        try:
            return float(value)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: not a number: {value!r}") from exc

    def get_bool(self, key: str, default=_REQUIRED) -> bool:
        value = self._raw(key, default)
        if not isinstance(value, str):
            return value
        lowered = value.lower()
        if lowered in ("true", "yes", "1", "on"):
            return True
        if lowered in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"config key {key!r}: not a boolean: {value!r}")

    def get_vector(self, key: str, default=_REQUIRED) -> np.ndarray:
        value = self._raw(key, default)
        if not isinstance(value, str):
            return value
        try:
            return np.array([float(cell) for cell in value.split(",")], dtype=float)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: not a vector: {value!r}") from exc

    def get_matrix(self, key: str, default=_REQUIRED) -> np.ndarray:
        value = self._raw(key, default)
        if not isinstance(value, str):
            return value
        try:
            rows = [
                [float(cell) for cell in row.split(",")]
                for row in value.split(";")
            ]
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: not a matrix: {value!r}") from exc
        lengths = {len(row) for row in rows}
        if len(lengths) != 1:
            raise ConfigError(f"config key {key!r}: ragged matrix rows")
        return np.array(rows, dtype=float)

    def get_seed(self, key: str) -> int:
        """Seeds are always explicit: a missing seed key is an error."""
        seed = self.get_int(key)
        if not 0 <= seed < 2**64:
            raise ConfigError(f"config key {key!r}: seed out of uint64 range")
        return seed

    def resolve_path(self, key: str, must_exist: bool = True) -> str:
        value = self.get_str(key)
        path = value if os.path.isabs(value) else os.path.join(self.base_dir, value)
        if must_exist and not os.path.exists(path):
            raise ConfigError(f"config key {key!r}: file not found: {path}")
        return path

    def validate_keys(self, allowed, required) -> None:
        """Reject unknown keys and report missing required ones."""
        unknown = sorted(set(self.entries) - set(allowed))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        missing = sorted(set(required) - set(self.entries))
        if missing:
            raise ConfigError(f"missing config keys: {', '.join(missing)}")
