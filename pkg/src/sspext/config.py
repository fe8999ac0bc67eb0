"""key=value run configuration files and their mapping onto config dataclasses."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path


def parse_value(text: str):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip("'\"")


def parse_assignments(lines, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = parse_value(value)
    return out


def load_config_file(path) -> dict:
    """Read a TOML-like file of ``key = value`` lines; section headers are ignored."""
    return parse_assignments(Path(path).read_text(encoding="utf-8").splitlines(), str(path))


def split_overrides(values: dict, *targets) -> list[dict]:
    """Distribute a flat key mapping over dataclass types; unknown keys raise."""
    names = [{f.name for f in dataclasses.fields(t)} for t in targets]
    parts = [{} for _ in targets]
    for key, value in values.items():
        hit = False
        for part, fields in zip(parts, names):
            if key in fields:
                part[key] = value
                hit = True
        if not hit:
            raise ValueError(f"unknown configuration key {key!r}")
    return parts
