"""Parser registry and ordered regex message catalog.

The catalog fixes the row space of every relation matrix: row k of a matrix
is "message pattern k fired".  Each pattern is a regex owned by exactly one
parser, applied line-by-line to that parser's captured stderr.  Within one
parser's rows, the first matching pattern wins, so a stderr line increments
exactly one row.  Regexes use Python's ``re`` dialect; catalogs intended to
be portable should stick to the Perl-compatible subset (character classes,
alternation, anchors, quantifiers).
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

FILE_PLACEHOLDER = "{file}"


class CatalogError(ValueError):
    """Raised when a catalog document is malformed or violates an invariant."""


@dataclass(frozen=True)
class ParserSpec:
    """One external parser: how to invoke it and how long to wait."""

    name: str
    command: str
    args: tuple[str, ...]
    timeout_s: float

    def __post_init__(self) -> None:
        if not self.name:
            raise CatalogError("parser name must be nonempty")
        n_placeholders = sum(a.count(FILE_PLACEHOLDER) for a in self.args)
        if n_placeholders != 1:
            raise CatalogError(
                f"parser {self.name!r}: args must contain exactly one "
                f"{FILE_PLACEHOLDER!r} placeholder, found {n_placeholders}"
            )
        if not self.timeout_s > 0:
            raise CatalogError(f"parser {self.name!r}: timeout_s must be > 0")

    def command_line(self, path: str | os.PathLike[str]) -> list[str]:
        """Argument vector for running this parser on ``path``."""
        return [self.command] + [
            a.replace(FILE_PLACEHOLDER, str(path)) for a in self.args
        ]


@dataclass(frozen=True)
class MessagePattern:
    """One catalog row: a regex owned by a parser."""

    row_index: int
    parser: str
    regex: str
    description: str = ""


@dataclass(frozen=True)
class MessageCatalog:
    """Ordered registry of parsers and their message patterns.

    Immutable after construction; safe to share across worker threads.
    """

    parsers: tuple[ParserSpec, ...]
    patterns: tuple[MessagePattern, ...]
    _compiled: dict[int, re.Pattern[str]] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self) -> None:
        names = [p.name for p in self.parsers]
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise CatalogError(f"duplicate parser name {dup!r}")
        declared = set(names)

        seen_rows: set[int] = set()
        for pat in self.patterns:
            if pat.row_index in seen_rows:
                raise CatalogError(f"row {pat.row_index}: duplicate row_index")
            seen_rows.add(pat.row_index)
            if pat.parser not in declared:
                raise CatalogError(
                    f"row {pat.row_index}: undeclared parser {pat.parser!r}"
                )
            try:
                compiled = re.compile(pat.regex)
            except re.error as exc:
                raise CatalogError(
                    f"row {pat.row_index}: regex does not compile: {exc}"
                ) from exc
            self._compiled[pat.row_index] = compiled

        n = len(self.patterns)
        if seen_rows and seen_rows != set(range(1, n + 1)):
            missing = min(set(range(1, n + 1)) - seen_rows)
            raise CatalogError(
                f"row {missing}: row_index values must be exactly 1..{n}"
            )
        # Canonical order is by row index.
        object.__setattr__(
            self, "patterns", tuple(sorted(self.patterns, key=lambda p: p.row_index))
        )

    @property
    def size(self) -> int:
        """Number of message rows N."""
        return len(self.patterns)

    def parser(self, name: str) -> ParserSpec:
        for p in self.parsers:
            if p.name == name:
                return p
        raise KeyError(name)

    def compiled(self, row_index: int) -> re.Pattern[str]:
        return self._compiled[row_index]


def parser_row_ranges(catalog: MessageCatalog) -> dict[str, set[int]]:
    """Row indices owned by each parser.

    Every row 1..N lands in exactly one parser's set; parsers with no
    patterns map to the empty set.
    """
    ranges: dict[str, set[int]] = {p.name: set() for p in catalog.parsers}
    for pat in catalog.patterns:
        ranges[pat.parser].add(pat.row_index)
    return ranges


def load_catalog(path: str | os.PathLike[str]) -> MessageCatalog:
    """Load and validate a catalog JSON document.

    Raises CatalogError for malformed JSON or the first violated invariant
    (naming the offending row where applicable).
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CatalogError(f"malformed catalog document {path}: {exc}") from exc
    if not isinstance(doc, dict) or "parsers" not in doc or "messages" not in doc:
        raise CatalogError(
            f"catalog document {path} must have 'parsers' and 'messages' keys"
        )
    try:
        parsers = tuple(
            ParserSpec(
                name=p["name"],
                command=p["command"],
                args=tuple(p["args"]),
                timeout_s=float(p["timeout_s"]),
            )
            for p in doc["parsers"]
        )
        patterns = tuple(
            MessagePattern(
                row_index=int(m["row"]),
                parser=m["parser"],
                regex=m["regex"],
                description=m.get("description", ""),
            )
            for m in doc["messages"]
        )
    except (KeyError, TypeError) as exc:
        raise CatalogError(f"malformed catalog document {path}: {exc}") from exc
    return MessageCatalog(parsers=parsers, patterns=patterns)


def save_catalog(catalog: MessageCatalog, path: str | os.PathLike[str]) -> None:
    """Write a catalog as JSON (atomic: temp file + rename)."""
    doc = {
        "parsers": [
            {
                "name": p.name,
                "command": p.command,
                "args": list(p.args),
                "timeout_s": p.timeout_s,
            }
            for p in catalog.parsers
        ],
        "messages": [
            {
                "row": m.row_index,
                "parser": m.parser,
                "regex": m.regex,
                "description": m.description,
            }
            for m in catalog.patterns
        ],
    }
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise
