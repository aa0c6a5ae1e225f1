"""Document ingestion and the line-numbered substrate that citations resolve against.

Every downstream stage cites source material as ``name:start-end`` line spans,
so the canonical form of a document is an immutable, line-numbered record.
Line numbers count every physical line, blank lines included, and may start at
an offset other than 1 so that excerpts keep their original numbering.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from html.parser import HTMLParser

FORMAT_PLAIN = "plain"
FORMAT_MARKDOWN = "markdown"
FORMAT_HTML = "html"
FORMATS = (FORMAT_PLAIN, FORMAT_MARKDOWN, FORMAT_HTML)

_NUMBERED_LINE_RE = re.compile(r"^(\d+):(?: (.*))?$")

# HTML ingestion keeps at most this many consecutive blank lines.
_MAX_BLANK_RUN = 2


class IngestError(Exception):
    """Raised when a raw input cannot be turned into a SourceDocument."""

    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(message)


class SpanError(Exception):
    """Raised when a source span cannot be resolved against a document."""

    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(message)


@dataclass(frozen=True)
class SourceRef:
    """An inclusive line range in a named document, e.g. WebsiteToS.txt:70-72."""

    source_name: str
    start_line: int
    end_line: int

    def __post_init__(self):
        if not self.source_name:
            raise ValueError("source_name must be non-empty")
        if not (1 <= self.start_line <= self.end_line):
            raise ValueError(
                f"invalid span {self.start_line}-{self.end_line}: "
                "need 1 <= start <= end"
            )

    @property
    def span_lines(self) -> int:
        return self.end_line - self.start_line + 1


@dataclass(frozen=True)
class SourceDocument:
    """Normalized, line-numbered document. Immutable; safe to share across workers."""

    doc_id: str
    source_name: str
    lines: tuple[tuple[int, str], ...]
    fingerprint: str

    @property
    def first_line(self) -> int:
        return self.lines[0][0]

    @property
    def last_line(self) -> int:
        return self.lines[-1][0]

    @property
    def line_count(self) -> int:
        return len(self.lines)

    def text(self) -> str:
        """The normalized document text (joining line texts reproduces it exactly)."""
        return "\n".join(text for _, text in self.lines)

    def line_text(self, line_number: int) -> str:
        if not (self.first_line <= line_number <= self.last_line):
            raise SpanError(
                "out_of_range",
                f"line {line_number} outside {self.source_name} "
                f"({self.first_line}..{self.last_line})",
            )
        return self.lines[line_number - self.first_line][1]

    def to_json(self) -> dict:
        return {
            "source_name": self.source_name,
            "doc_id": self.doc_id,
            "fingerprint": self.fingerprint,
            "first_line": self.first_line,
            "lines": [[n, t] for n, t in self.lines],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SourceDocument":
        lines = tuple((int(n), str(t)) for n, t in data["lines"])
        return cls(
            doc_id=str(data["doc_id"]),
            source_name=str(data["source_name"]),
            lines=lines,
            fingerprint=str(data["fingerprint"]),
        )


class _TextExtractor(HTMLParser):
    """Collects text content from HTML, ignoring script/style."""

    _SKIP = {"script", "style"}
    _BREAKERS = {
        "p", "div", "br", "li", "ul", "ol", "table", "tr", "section",
        "article", "header", "footer", "h1", "h2", "h3", "h4", "h5", "h6",
    }

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self._skip_depth = 0

    def handle_starttag(self, tag, attrs):
        if tag in self._SKIP:
            self._skip_depth += 1
        elif tag in self._BREAKERS:
            self.parts.append("\n")

    def handle_endtag(self, tag):
        if tag in self._SKIP and self._skip_depth > 0:
            self._skip_depth -= 1
        elif tag in self._BREAKERS:
            self.parts.append("\n")

    def handle_data(self, data):
        if self._skip_depth == 0:
            self.parts.append(data)

    def text(self) -> str:
        return "".join(self.parts)


def _strip_html(text: str) -> str:
    extractor = _TextExtractor()
    extractor.feed(text)
    extractor.close()
    lines = [line.strip() for line in extractor.text().split("\n")]
    # Collapse runs of more than _MAX_BLANK_RUN blank lines so fingerprints
    # stay reproducible regardless of tag nesting noise.
    out: list[str] = []
    blanks = 0
    for line in lines:
        if line == "":
            blanks += 1
            if blanks <= _MAX_BLANK_RUN:
                out.append(line)
        else:
            blanks = 0
            out.append(line)
    while out and out[0] == "":
        out.pop(0)
    while out and out[-1] == "":
        out.pop()
    return "\n".join(out)


def fingerprint_text(normalized_text: str) -> str:
    """Content fingerprint of the normalized text only (not the source name),
    so renamed copies of the same document share identity for caching."""
    return hashlib.sha256(normalized_text.encode("utf-8")).hexdigest()


def ingest(
    raw_bytes: bytes,
    source_name: str,
    format_hint: str | None = None,
    *,
    first_line: int = 1,
) -> SourceDocument:
    """Normalize raw input into a SourceDocument.

    Normalization: UTF-8 decode (BOM stripped), carriage returns removed,
    blank lines preserved, a single trailing newline treated as a terminator
    rather than a final blank line. HTML inputs are tag-stripped first.
    `first_line` offsets the numbering so excerpts keep their original numbers.
    """
    if format_hint is not None and format_hint not in FORMATS:
        raise ValueError(f"unknown format hint {format_hint!r}")
    if first_line < 1:
        raise ValueError("first_line must be >= 1")
    try:
        text = raw_bytes.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise IngestError("encoding", f"{source_name}: not valid UTF-8: {exc}") from exc

    text = text.replace("\r\n", "\n").replace("\r", "\n")
    if format_hint == FORMAT_HTML:
        text = _strip_html(text)

    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    if not any(line.strip() for line in lines):
        raise IngestError("empty", f"{source_name}: document empty after normalization")

    numbered = tuple((first_line + i, line) for i, line in enumerate(lines))
    normalized = "\n".join(lines)
    fp = fingerprint_text(normalized)
    return SourceDocument(
        doc_id=fp[:12],
        source_name=source_name,
        lines=numbered,
        fingerprint=fp,
    )


def ingest_path(path, format_hint: str | None = None, *, source_name: str | None = None,
                first_line: int = 1) -> SourceDocument:
    """Ingest a file, inferring the format from its extension when no hint is given."""
    from pathlib import Path

    p = Path(path)
    if format_hint is None:
        suffix = p.suffix.lower()
        if suffix in (".html", ".htm"):
            format_hint = FORMAT_HTML
        elif suffix in (".md", ".markdown"):
            format_hint = FORMAT_MARKDOWN
        else:
            format_hint = FORMAT_PLAIN
    return ingest(p.read_bytes(), source_name or p.name, format_hint,
                  first_line=first_line)


def render_numbered(
    doc: SourceDocument,
    *,
    start_line: int | None = None,
    end_line: int | None = None,
) -> str:
    """Render lines as ``<number>: <text>``; blank lines render as ``<number>:``.

    This is the exact text fed to the parser agent, so the format is bit-stable.
    An optional sub-range renders a chunk with its original numbering.
    """
    start = doc.first_line if start_line is None else start_line
    end = doc.last_line if end_line is None else end_line
    if start < doc.first_line or end > doc.last_line or start > end:
        raise SpanError(
            "out_of_range",
            f"render range {start}-{end} outside {doc.source_name} "
            f"({doc.first_line}..{doc.last_line})",
        )
    rendered = []
    for number, text in doc.lines[start - doc.first_line : end - doc.first_line + 1]:
        rendered.append(f"{number}: {text}" if text else f"{number}:")
    return "\n".join(rendered)


def parse_numbered(numbered_text: str) -> list[tuple[int, str]]:
    """Invert render_numbered back to (line_number, text) pairs."""
    pairs: list[tuple[int, str]] = []
    for raw in numbered_text.split("\n"):
        m = _NUMBERED_LINE_RE.match(raw)
        if m is None:
            raise ValueError(f"not a numbered line: {raw!r}")
        pairs.append((int(m.group(1)), m.group(2) or ""))
    return pairs


def resolve_span(doc: SourceDocument, ref: SourceRef) -> str:
    """Text of the cited lines, newline-joined. Fails rather than clamps."""
    if ref.source_name != doc.source_name:
        raise SpanError(
            "wrong_document",
            f"span names {ref.source_name!r} but document is {doc.source_name!r}",
        )
    if ref.start_line < doc.first_line or ref.end_line > doc.last_line:
        raise SpanError(
            "out_of_range",
            f"span {ref.start_line}-{ref.end_line} outside {doc.source_name} "
            f"({doc.first_line}..{doc.last_line})",
        )
    texts = [
        doc.lines[n - doc.first_line][1]
        for n in range(ref.start_line, ref.end_line + 1)
    ]
    return "\n".join(texts)
