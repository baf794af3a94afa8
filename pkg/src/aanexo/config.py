"""Flat ``section.key = value`` config files mapped onto nested dataclasses.

Example::

    # subject
    subject.human.inertia = 0.4315
    mpc.w_theta = 20000
    adaptation.enabled = true
"""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np


def flatten(obj, prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.update(flatten(value, key + "."))
        else:
            out[key] = value
    return out


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, enum.Enum):
        return str(value.value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    if isinstance(value, (tuple, list)):
        return ", ".join(format_value(v) for v in value)
    return str(value)


def _parse_scalar(text: str, like):
    t = text.strip()
    if t.lower() == "none":
        return None
    if isinstance(like, bool):
        if t.lower() in ("true", "yes", "1", "on"):
            return True
        if t.lower() in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(like, enum.Enum):
        return type(like)(t)
    if isinstance(like, int):
        return int(t)
    if isinstance(like, str):
        return t
    return float(t)


def parse_value(text: str, like):
    """Parse ``text`` using the type of the current value ``like``."""
    if text.strip().lower() == "none":
        return None
    if isinstance(like, (tuple, list)) or (like is None and "," in text):
        parts = [p for p in text.split(",") if p.strip()]
        item = like[0] if like else 0.0
        return tuple(_parse_scalar(p, item) for p in parts)
    if like is None:
        t = text.strip()
        if t.lower() == "none":
            return None
        try:
            return float(t)
        except ValueError:
            return t
    return _parse_scalar(text, like)


def apply_overrides(obj, overrides: dict[str, Any], prefix: str = ""):
    """Return a copy of dataclass ``obj`` with dotted-key overrides applied.

    Values may be strings (parsed against the current field type) or
    already-typed values.  Unknown keys under ``prefix`` raise ``KeyError``.
    """
    mine = {k[len(prefix):]: v for k, v in overrides.items() if k.startswith(prefix)}
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in mine.items():
        head, _, rest = key.partition(".")
        if head not in names:
            raise KeyError(f"unknown config key {prefix}{key}")
        current = getattr(obj, head)
        if rest:
            if not dataclasses.is_dataclass(current):
                raise KeyError(f"{prefix}{head} has no sub-keys")
            continue
        changes[head] = parse_value(value, current) if isinstance(value, str) else value
    for head in {k.partition(".")[0] for k in mine if "." in k}:
        changes[head] = apply_overrides(getattr(obj, head), overrides, f"{prefix}{head}.")
    return dataclasses.replace(obj, **changes) if changes else obj


def read_kv(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        out[key.strip()] = value.strip()
    return out


def write_kv(path, values: dict[str, Any], header: str | None = None):
    lines = [f"# {h}" for h in header.splitlines()] if header else []
    lines += [f"{k} = {format_value(v)}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def config_hash(values: dict[str, Any]) -> str:
    canon = json.dumps({k: format_value(v) for k, v in sorted(values.items())}, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
