"""Canonical byte serialization shared by the record store and the gateway.

One structural value maps to exactly one byte string: keys sorted by code
point, no insignificant whitespace, UTF-8, integers in minimal decimal form,
booleans as true/false. Floats and None are rejected outright — hashes built
over these bytes must be bit-exact across platforms.
"""

import json
from typing import Any

Scalar = str | int | bool


class UnsupportedScalar(ValueError):
    """A value outside the canonical whitelist (float, None, object, ...)."""


def _check(value: Any, path: str) -> None:
    if isinstance(value, bool) or isinstance(value, int) or isinstance(value, str):
        return
    if isinstance(value, float):
        raise UnsupportedScalar(f"float not allowed in canonical value at {path}")
    if value is None:
        raise UnsupportedScalar(f"null not allowed in canonical value at {path}")
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise UnsupportedScalar(f"non-string key {key!r} at {path}")
            _check(item, f"{path}.{key}")
        return
    if isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check(item, f"{path}[{i}]")
        return
    raise UnsupportedScalar(f"unsupported type {type(value).__name__} at {path}")


def canonicalize(value: Any) -> bytes:
    """Serialize a structured value (dicts/lists over str/int/bool) to
    canonical bytes. Raises UnsupportedScalar for anything else."""
    _check(value, "$")
    text = json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return text.encode("utf-8")


def scalar_map(value: Any, what: str = "payload") -> dict[str, Scalar]:
    """Validate that value is a flat string→scalar map and return it."""
    if not isinstance(value, dict):
        raise UnsupportedScalar(f"{what} must be a map, got {type(value).__name__}")
    for key, item in value.items():
        if not isinstance(key, str):
            raise UnsupportedScalar(f"{what} key {key!r} is not a string")
        if not isinstance(item, (str, int, bool)) or isinstance(item, float):
            raise UnsupportedScalar(
                f"{what}[{key}] must be a string/integer/boolean, got {type(item).__name__}"
            )
    return value
