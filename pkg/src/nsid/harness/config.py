"""INI-style experiment configuration with command-line overrides.

A config file holds flat ``key = value`` pairs grouped in ``[sections]``::

    [experiment]
    n_samples = 256, 1024
    seeds = 0

    [grid.factorized]
    mask = 0.1, 1.0

Values are parsed as comma-separated lists of ints, floats, booleans or
strings. Overrides use ``section.key=value`` (``experiment`` may be
omitted for top-level keys).
"""

from __future__ import annotations

import configparser
import os
from pathlib import Path

OUTPUT_ROOT_ENV = "NSID_OUTPUT_ROOT"


class ConfigError(ValueError):
    """Malformed configuration file or override."""


def parse_scalar(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_value(text: str):
    """A single scalar, or a tuple when the text contains commas."""
    if "," in text:
        return tuple(parse_scalar(part) for part in text.split(",") if part.strip())
    return parse_scalar(text)


def read_config(path: str | Path | None) -> dict[str, dict]:
    """Parse a config file into ``{section: {key: value}}``."""
    if path is None:
        return {}
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return {s: {k: parse_value(v) for k, v in parser.items(s)} for s in parser.sections()}


def apply_overrides(config: dict[str, dict], overrides: list[str]) -> dict[str, dict]:
    """Return a copy of ``config`` with ``section.key=value`` overrides applied."""
    out = {s: dict(v) for s, v in config.items()}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        section, _, name = key.strip().rpartition(".")
        section = section or "experiment"
        if not name:
            raise ConfigError(f"override {item!r} has an empty key")
        out.setdefault(section, {})[name] = parse_value(value)
    return out


def output_root(explicit: str | None = None) -> Path:
    """Output directory: explicit argument, then the environment, then ``./outputs``."""
    if explicit:
        return Path(explicit)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "outputs"))
