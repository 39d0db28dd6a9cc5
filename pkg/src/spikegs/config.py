"""Plain ``key = value`` experiment configs.

One setting per line, ``#`` starts a comment.  Keys are checked against the
fields of the dataclasses a command accepts, so a typo fails loudly instead of
silently running with a default.  Values are converted to the type of the
field's default (``none`` clears an optional value).
"""

from __future__ import annotations

import dataclasses

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def schema_of(*targets) -> dict:
    """Map of accepted keys to their defaults, from dataclass types or dicts."""
    schema = {}
    for target in targets:
        if isinstance(target, dict):
            schema.update(target)
            continue
        for f in dataclasses.fields(target):
            if f.default is not dataclasses.MISSING:
                schema[f.name] = f.default
            elif f.default_factory is not dataclasses.MISSING:
                schema[f.name] = f.default_factory()
    return schema


def coerce(key: str, text: str, default):
    text = text.strip()
    try:
        if default is None:
            return None if text.lower() == "none" else float(text)
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError as err:
        raise ValueError(f"bad value for {key!r}: {err}") from None
    return text


def parse_lines(lines, *targets, source: str = "<config>") -> dict:
    schema = schema_of(*targets)
    values = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, text = (part.strip() for part in line.split("=", 1))
        if key not in schema:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r} "
                             f"(accepted: {', '.join(sorted(schema))})")
        values[key] = coerce(key, text, schema[key])
    return values


def parse_config(path, *targets) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return parse_lines(f, *targets, source=str(path))


def parse_overrides(pairs, *targets) -> dict:
    """``--set key=value`` flags, validated like config lines."""
    return parse_lines(pairs or [], *targets, source="--set")


def pick(values: dict, target) -> dict:
    """The subset of ``values`` that ``target`` (a dataclass type) accepts."""
    names = {f.name for f in dataclasses.fields(target)}
    return {k: v for k, v in values.items() if k in names}
