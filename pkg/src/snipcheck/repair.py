"""Deterministic source repairs: closing missing brackets and picking a
compiler version that accepts the code."""

from __future__ import annotations

import logging
import re
from collections.abc import Callable
from dataclasses import dataclass, field

from snipcheck.solc import (
    Catalog,
    CompileOutput,
    ConfigurationError,
    Diagnostic,
    compile_source,
    list_versions,
    parse_version,
)

logger = logging.getLogger(__name__)

PAIRS = {"(": ")", "{": "}", "[": "]"}
CLOSERS = {v: k for k, v in PAIRS.items()}


class StructuralError(ValueError):
    def __init__(self, message: str, position: int) -> None:
        super().__init__(f"{message} at offset {position}")
        self.position = position


@dataclass
class RepairOutcome:
    repaired_source: str
    inserted_symbols: list[tuple[int, str]] = field(default_factory=list)
    chosen_version: str | None = None
    diagnostics: list[str] = field(default_factory=list)

    def strip_insertions(self) -> str:
        """The input text: ``repaired_source`` minus every inserted symbol."""
        out = self.repaired_source
        for pos, sym in sorted(self.inserted_symbols, reverse=True):
            out = out[:pos] + out[pos + len(sym):]
        return out


def _scan(source: str) -> tuple[list[tuple[str, int]], bool]:
    """Open-bracket stack at end of ``source`` and whether it ends inside a
    line comment.  Strings and comments are skipped."""
    stack: list[tuple[str, int]] = []
    i, n = 0, len(source)
    in_line_comment = False
    while i < n:
        c = source[i]
        if c == "/" and source.startswith("//", i):
            j = source.find("\n", i)
            if j < 0:
                in_line_comment = True
                break
            i = j + 1
            continue
        if c == "/" and source.startswith("/*", i):
            j = source.find("*/", i + 2)
            if j < 0:
                raise StructuralError("unterminated block comment", i)
            i = j + 2
            continue
        if c in "\"'":
            j = i + 1
            while j < n and source[j] != c:
                if source[j] == "\n":
                    raise StructuralError("unterminated string literal", i)
                j += 2 if source[j] == "\\" else 1
            if j >= n:
                raise StructuralError("unterminated string literal", i)
            i = j + 1
            continue
        if c in PAIRS:
            stack.append((c, i))
        elif c in CLOSERS:
            if not stack:
                raise StructuralError(f"surplus {c!r}", i)
            opener, pos = stack.pop()
            if PAIRS[opener] != c:
                raise StructuralError(f"{c!r} does not close {opener!r} opened at {pos}", i)
        i += 1
    return stack, in_line_comment


def balance_structure(source: str) -> RepairOutcome:
    """Append the closers that balance every open bracket, innermost first.

    Raises StructuralError for surplus or mismatched closers and for
    unterminated strings or block comments.
    """
    stack, in_comment = _scan(source)
    if not stack:
        return RepairOutcome(source)
    out = source
    inserted: list[tuple[int, str]] = []
    if in_comment:
        inserted.append((len(out), "\n"))
        out += "\n"
    for opener, _ in reversed(stack):
        sym = PAIRS[opener]
        inserted.append((len(out), sym))
        out += sym
    return RepairOutcome(out, inserted)


# ------------------------------------------------------------------ versions

PRAGMA_RE = re.compile(r"pragma\s+solidity\s+([^;]*);")
_PINNED_RE = re.compile(r"^\s*(?:\^|~|=)?\s*(\d+)\.(\d+)(?:\.\d+)?\s*$")


def pragma_series(source: str) -> tuple[int, int] | None:
    """The compiler series a source pins with ``^x.y.z``, ``=x.y.z`` or
    ``x.y.z``; ranges and absent pragmas give None."""
    m = PRAGMA_RE.search(source)
    if not m:
        return None
    pin = _PINNED_RE.match(m.group(1))
    return (int(pin.group(1)), int(pin.group(2))) if pin else None


def set_pragma(source: str, version: str) -> str:
    """Rewrite every ``pragma solidity`` directive to ``^version``, or add one
    line on top when there is none.  No other line changes."""
    directive = f"pragma solidity ^{version};"
    if PRAGMA_RE.search(source):
        return PRAGMA_RE.sub(directive, source)
    return directive + "\n" + source


@dataclass
class Adapted:
    version: str
    source: str
    output: CompileOutput


@dataclass
class AdaptFailure:
    attempts: list[tuple[str, list[Diagnostic]]]

    @property
    def diagnostics(self) -> list[Diagnostic]:
        return [d for _, ds in self.attempts for d in ds]

    def summary(self) -> str:
        parts = []
        for version, diags in self.attempts:
            first = next((d.message for d in diags if d.is_error), "no error reported")
            parts.append(f"{version}: {first}")
        return "; ".join(parts)


Compiler = Callable[[str, str, Catalog], CompileOutput]


def adapt_version(
    source: str,
    catalog: Catalog,
    *,
    preferred: tuple[int, int] | None = None,
    compiler: Compiler = compile_source,
) -> Adapted | AdaptFailure:
    """Try catalog compilers in policy order until one accepts ``source``.

    The pragma is rewritten for each attempt.  ``preferred`` defaults to the
    series the source's own pragma pins.
    """
    if not catalog.compilers:
        raise ConfigurationError("compiler catalog is empty")
    if preferred is None:
        preferred = pragma_series(source)
    versions = list_versions(catalog, preferred)
    if not versions:
        raise ConfigurationError("no compiler in the catalog is installed")
    attempts: list[tuple[str, list[Diagnostic]]] = []
    for version in versions:
        candidate = set_pragma(source, version)
        out = compiler(candidate, version, catalog)
        if out.ok:
            return Adapted(version, candidate, out)
        attempts.append((version, out.errors or list(out.diagnostics)))
        logger.debug("compiler %s rejected source: %s", version, attempts[-1][1][:1])
    return AdaptFailure(attempts)


def version_at_least(version: str, major: int, minor: int) -> bool:
    return parse_version(version)[:2] >= (major, minor)
