"""Canonical JSON serialization and a small structural validator.

Canonical form is sorted keys, compact separators, ASCII only, newline
terminated records. Float fields rely on repr round-tripping, which makes
save -> load -> save byte-stable.
"""

from __future__ import annotations

import json
from typing import Any

from .errors import SchemaViolationError


def canon_dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def canon_line(obj: Any) -> str:
    return canon_dumps(obj) + "\n"


_TYPE_CHECKS = {
    "object": lambda v: isinstance(v, dict),
    "array": lambda v: isinstance(v, list),
    "string": lambda v: isinstance(v, str),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "boolean": lambda v: isinstance(v, bool),
    "null": lambda v: v is None,
}


def validate_value(schema: dict, value: Any, path: str) -> None:
    """Check value against a small JSON-schema subset; raise with a field path.

    Supported keys: type (str or list of str), enum, required, properties,
    additionalProperties (bool), items, minItems.
    """
    types = schema.get("type")
    if types is not None:
        allowed = [types] if isinstance(types, str) else list(types)
        if not any(_TYPE_CHECKS[t](value) for t in allowed):
            raise SchemaViolationError(path, f"expected {'|'.join(allowed)}")
    if "enum" in schema and value not in schema["enum"]:
        raise SchemaViolationError(path, f"not one of {schema['enum']}")
    if isinstance(value, dict):
        props = schema.get("properties", {})
        for name in schema.get("required", ()):
            if name not in value:
                raise SchemaViolationError(f"{path}.{name}", "missing required field")
        if schema.get("additionalProperties") is False:
            for name in value:
                if name not in props:
                    raise SchemaViolationError(f"{path}.{name}", "unexpected field")
        for name, sub in props.items():
            if name in value:
                validate_value(sub, value[name], f"{path}.{name}")
    if isinstance(value, list):
        if "minItems" in schema and len(value) < schema["minItems"]:
            raise SchemaViolationError(path, f"expected at least {schema['minItems']} items")
        items = schema.get("items")
        if items is not None:
            for i, item in enumerate(value):
                validate_value(items, item, f"{path}[{i}]")
