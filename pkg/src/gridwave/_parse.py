"""Strict dict -> dataclass conversion used by the JSON loaders."""
import dataclasses
import math

from .errors import ParseError


def build(cls, data, where, skip=()):
    """Instantiate dataclass ``cls`` from ``data``, rejecting unknown keys.

    Numeric fields are coerced to float. ``skip`` names keys consumed by the
    caller (e.g. a ``kind`` discriminator).
    """
    if not isinstance(data, dict):
        raise ParseError(f"{where}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields) - set(skip)
    if unknown:
        raise ParseError(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, f in fields.items():
        if name in data:
            kwargs[name] = _coerce(data[name], f, where)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ParseError(f"{where}: missing required key '{name}'")
    return cls(**kwargs)


def _coerce(v, f, where):
    if f.type in (float, "float"):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(f"{where}: '{f.name}' must be a number")
        v = float(v)
        if not math.isfinite(v):
            raise ParseError(f"{where}: '{f.name}' must be finite")
    return v


def pick_kind(data, choices, where):
    """Return the dataclass selected by ``data['kind']``."""
    if not isinstance(data, dict):
        raise ParseError(f"{where}: expected an object")
    kind = data.get("kind")
    if kind not in choices:
        raise ParseError(f"{where}: kind must be one of {sorted(choices)}, got {kind!r}")
    return build(choices[kind], data, where, skip=("kind",))
