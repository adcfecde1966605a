"""Pull Solidity code blocks out of Q&A dumps and drop the unusable ones."""

from __future__ import annotations

import enum
import html
import re
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

DEFAULT_MIN_LINES = 2


class Language(str, enum.Enum):
    SOLIDITY = "Solidity"
    OTHER = "Other"
    UNKNOWN = "Unknown"


class Format(str, enum.Enum):
    HTML = "html"
    MARKDOWN = "markdown"
    PLAIN = "plain"


@dataclass(frozen=True)
class Origin:
    locator: str
    start: int  # byte offsets into the original document
    end: int


@dataclass(frozen=True)
class Snippet:
    id: str
    source_text: str
    origin: Origin
    line_count: int
    language_guess: Language

    @classmethod
    def from_text(cls, text: str, *, id: str = "snippet", locator: str = "") -> Snippet:
        if not text.strip():
            raise ValueError("snippet text is empty")
        return cls(id, text, Origin(locator, 0, len(text.encode())), count_lines(text), guess_language(text))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "source_text": self.source_text,
            "origin": {"locator": self.origin.locator, "start": self.origin.start, "end": self.origin.end},
            "line_count": self.line_count,
            "language_guess": self.language_guess.value,
        }


def count_lines(text: str) -> int:
    return sum(1 for line in text.splitlines() if line.strip())


# ------------------------------------------------------------------ classifier

_COMMENTS = re.compile(r"//[^\n]*|/\*.*?\*/|#[^\n]*", re.S)

_SOLIDITY_SIGNS = [
    (re.compile(r"\bpragma\s+solidity\b"), 3),
    (re.compile(r"\b(?:contract|library|interface)\s+[A-Za-z_]\w*\s*(?:is\b|\{)"), 3),
    (re.compile(r"\bfunction\s+\w*\s*\([^)]*\)\s*(?:public|external|internal|private|view|pure|payable|returns|onlyOwner)\b"), 2),
    (re.compile(r"\bmapping\s*\("), 3),
    (re.compile(r"\b(?:msg\.(?:sender|value)|tx\.origin|block\.(?:timestamp|number)|address\(this\))"), 2),
    (re.compile(r"\b(?:uint\d*|int\d*|bytes\d*|address(?:\s+payable)?|bool)\s+(?:public\s+|private\s+|internal\s+|memory\s+|storage\s+|calldata\s+)?[A-Za-z_]\w*\s*[;=)]"), 1),
    (re.compile(r"\b(?:modifier|emit|event)\s+[A-Za-z_]\w*"), 2),
    (re.compile(r"\brequire\s*\([^'\"]"), 1),
]

_FOREIGN_SIGNS = [
    re.compile(r"\b(?:const|let|var)\s+[A-Za-z_$][\w$]*\s*="),
    re.compile(r"=>\s*[{(]|\)\s*=>"),
    re.compile(r"\bconsole\.\w+|\bawait\s|\basync\s"),
    re.compile(r"\brequire\s*\(\s*['\"]|\bimport\s+[\w{}*,\s]+\s+from\s+['\"]"),
    re.compile(r"^\s*(?:def|class)\s+\w+.*:\s*$|^\s*#include\b", re.M),
    re.compile(r"\bweb3\.|\bethers\.|\bdocument\.|\bwindow\."),
]


def guess_language(text: str) -> Language:
    """Keyword scoring; snippets do not compile yet, so no parser is used."""
    body = _COMMENTS.sub("", text)
    if not body.strip():
        return Language.OTHER  # comment-only block
    pos = sum(w for rx, w in _SOLIDITY_SIGNS if rx.search(body))
    neg = 2 * sum(1 for rx in _FOREIGN_SIGNS if rx.search(body))
    if pos >= 2 and pos > neg:
        return Language.SOLIDITY
    if pos == 0 and neg == 0:
        return Language.UNKNOWN
    return Language.OTHER


# ------------------------------------------------------------------ extraction

_CODE_TAG = re.compile(r"<code\b[^>]*>(.*?)</code\s*>", re.S | re.I)
_FENCE_OPEN = re.compile(r"^ {0,3}(`{3,}|~{3,})[^\n]*\n", re.M)


def _byte_offsets(text: str) -> list[int]:
    """Char index -> byte offset, for every index including len(text)."""
    out = [0]
    total = 0
    for ch in text:
        total += len(ch.encode())
        out.append(total)
    return out


def _html_blocks(text: str) -> Iterable[tuple[int, int, str]]:
    for m in _CODE_TAG.finditer(text):
        yield m.start(1), m.end(1), html.unescape(m.group(1))


def _markdown_blocks(text: str) -> Iterable[tuple[int, int, str]]:
    pos = 0
    while True:
        m = _FENCE_OPEN.search(text, pos)
        if not m:
            return
        fence = m.group(1)
        closer = re.compile(r"^ {0,3}" + re.escape(fence[0]) + "{" + str(len(fence)) + r",}[ \t]*$", re.M)
        c = closer.search(text, m.end())
        start = m.end()
        end = c.start() if c else len(text)  # unclosed fence runs to the end
        yield start, end, text[start:end]
        if not c:
            return
        pos = c.end()


def extract_snippets(document: bytes, fmt: str | Format, locator: str = "") -> list[Snippet]:
    """One Snippet per code block, in document order, without deduplication.

    Offsets are byte offsets into ``document``.  For HTML the text is
    entity-decoded, so slicing reproduces it after ``html.unescape``.
    """
    try:
        fmt = Format(fmt)
    except ValueError:
        raise ValueError(f"unknown document format {fmt!r}; expected html, markdown or plain") from None
    text = document.decode("utf-8")  # UnicodeDecodeError propagates
    if fmt is Format.PLAIN:
        blocks: Iterable[tuple[int, int, str]] = [(0, len(text), text)]
    elif fmt is Format.HTML:
        blocks = _html_blocks(text)
    else:
        blocks = _markdown_blocks(text)
    offsets = _byte_offsets(text)
    stem = locator or "doc"
    out = []
    for k, (a, b, body) in enumerate(blocks):
        if not body.strip():
            continue
        out.append(Snippet(
            id=f"{stem}#{k}",
            source_text=body,
            origin=Origin(locator, offsets[a], offsets[b]),
            line_count=count_lines(body),
            language_guess=guess_language(body),
        ))
    return out


def filter_snippets(snippets: Iterable[Snippet], min_lines: int = DEFAULT_MIN_LINES) -> list[Snippet]:
    """Keep Solidity snippets of at least ``min_lines`` non-empty lines."""
    return [
        s for s in snippets
        if s.language_guess is Language.SOLIDITY and s.line_count >= min_lines
    ]


def format_for_path(path: str | Path) -> Format:
    suffix = Path(path).suffix.lower()
    if suffix in (".html", ".htm"):
        return Format.HTML
    if suffix in (".md", ".markdown"):
        return Format.MARKDOWN
    return Format.PLAIN


def read_snippets(path: str | Path) -> list[Snippet]:
    p = Path(path)
    return extract_snippets(p.read_bytes(), format_for_path(p), str(p))
