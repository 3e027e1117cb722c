"""Escaping and small text-format helpers shared by the file formats.

All plain-text formats in this package are tab-separated with
backslash-escaped fields, so strings containing tabs, newlines,
backslashes, or non-printable bytes stay diffable and round-trip
losslessly.
"""
from __future__ import annotations


def escape_field(s: str) -> str:
    """Backslash-escape a string into printable ASCII (reversible)."""
    return s.encode("unicode_escape").decode("ascii")


def unescape_field(s: str) -> str:
    """Inverse of :func:`escape_field`."""
    try:
        return s.encode("ascii").decode("unicode_escape")
    except UnicodeError as exc:
        raise ValueError(f"malformed escaped field {s!r}") from exc
