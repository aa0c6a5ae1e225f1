"""Term extraction over chunks.

Builds the extraction prompt for each chunk, validates every candidate the
backend returns, flags suspicious citations, and merges chunk results into
one deduplicated, source-ordered term list with a per-chunk coverage report.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .backends import Backend, BackendError, cached_complete, complete
from .chunking import Chunk, ChunkMode, ChunkStrategy, chunk as chunk_document
from .documents import SourceDocument, render_numbered
from .prompts import PROMPT_VERSION, build_parser_request
from .terms import SchemaError, Term, dedupe_terms, validate_term

DEFAULT_WORKERS = 4


class ExtractError(Exception):
    """Extraction failed for one chunk."""

    def __init__(self, chunk_id: str, message: str):
        self.chunk_id = chunk_id
        super().__init__(message)


@dataclass(frozen=True)
class ExtractionConfig:
    strategy: ChunkStrategy
    aspects: tuple[str, ...] | None = None
    provider_name: str | None = None
    prompt_version: str = PROMPT_VERSION

    def __post_init__(self):
        if self.aspects is not None:
            if not self.aspects or any(
                not isinstance(a, str) or not a.strip() for a in self.aspects
            ):
                raise ValueError("aspects must be non-empty strings")

    @property
    def aspect_label(self) -> str | None:
        """The aspect string stamped onto extracted terms."""
        if self.aspects is None:
            return None
        return "; ".join(self.aspects)

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy.to_json(),
            "aspects": list(self.aspects) if self.aspects else None,
            "provider_name": self.provider_name,
            "prompt_version": self.prompt_version,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ExtractionConfig":
        aspects = data.get("aspects")
        return cls(
            strategy=ChunkStrategy.from_json(data["strategy"]),
            aspects=tuple(aspects) if aspects else None,
            provider_name=data.get("provider_name"),
            prompt_version=data.get("prompt_version", PROMPT_VERSION),
        )


@dataclass
class ChunkExtraction:
    chunk_id: str
    terms: list[Term]
    rejected_count: int
    flagged_outside_chunk: tuple[str, ...]
    warnings: list[str]


@dataclass
class ExtractionOutcome:
    terms: list[Term]
    coverage: list[dict]
    warnings: list[str]
    failures: list[dict] = field(default_factory=list)


def run_request(backend: Backend, req, cache_dir=None):
    if cache_dir is not None:
        return cached_complete(backend, req, cache_dir)
    return complete(backend, req)


def extract_chunk(
    chunk: Chunk,
    doc: SourceDocument,
    cfg: ExtractionConfig,
    backend: Backend,
    *,
    cache_dir=None,
    replica_note: str | None = None,
) -> ChunkExtraction:
    """Extract terms from one chunk.

    Candidates that fail validation are dropped and counted; candidates that
    validate but cite lines outside the chunk are kept and flagged, since the
    verifier is the arbiter of whether a citation is actually wrong.
    """
    if chunk.doc_id != doc.doc_id:
        raise ValueError(
            f"chunk {chunk.chunk_id} belongs to document {chunk.doc_id}, "
            f"not {doc.doc_id}"
        )
    numbered = render_numbered(
        doc, start_line=chunk.start_line, end_line=chunk.end_line
    )
    req = build_parser_request(doc.source_name, numbered, aspects=cfg.aspects)
    if replica_note:
        req = build_parser_request(
            doc.source_name, numbered + "\n\n" + replica_note, aspects=cfg.aspects
        )
    try:
        resp = run_request(backend, req, cache_dir)
    except BackendError as exc:
        if exc.kind == "malformed_output":
            raise ExtractError(chunk.chunk_id, str(exc)) from exc
        raise

    warnings: list[str] = []
    terms: list[Term] = []
    flagged: list[str] = []
    rejected = 0
    for i, candidate in enumerate(resp.parsed):
        try:
            term = validate_term(
                candidate,
                doc,
                provider_name=cfg.provider_name,
                aspect=cfg.aspect_label,
                warnings=warnings,
            )
        except SchemaError as exc:
            rejected += 1
            warnings.append(
                f"chunk {chunk.chunk_id}: rejected candidate {i}: "
                f"{exc.kind}: {exc}"
            )
            continue
        if (
            term.source.start_line < chunk.start_line
            or term.source.end_line > chunk.end_line
        ):
            flagged.append(term.term_id)
            warnings.append(
                f"chunk {chunk.chunk_id}: term {term.term_id} cites "
                f"{term.source.start_line}-{term.source.end_line} outside "
                f"chunk range {chunk.start_line}-{chunk.end_line}"
            )
        terms.append(term)

    return ChunkExtraction(
        chunk_id=chunk.chunk_id,
        terms=terms,
        rejected_count=rejected,
        flagged_outside_chunk=tuple(flagged),
        warnings=warnings,
    )


def extract_document(
    doc: SourceDocument,
    cfg: ExtractionConfig,
    backend: Backend,
    *,
    workers: int = DEFAULT_WORKERS,
    best_effort: bool = False,
    cache_dir=None,
) -> ExtractionOutcome:
    """Chunk the document, extract every chunk, merge.

    parallel_merge runs parallel_fanout independent passes over each chunk
    (each pass marked in the prompt so requests stay distinct) and relies on
    dedupe to collapse agreements. Results are collected in submission order,
    so output does not depend on thread scheduling.
    """
    chunks = chunk_document(doc, cfg.strategy)
    passes = 1
    if cfg.strategy.mode is ChunkMode.PARALLEL_MERGE:
        passes = cfg.strategy.parallel_fanout

    work: list[tuple[Chunk, str | None]] = []
    for c in chunks:
        for i in range(passes):
            note = f"Independent extraction pass {i + 1} of {passes}." if i else None
            work.append((c, note))

    def job(item):
        c, note = item
        return extract_chunk(
            c, doc, cfg, backend, cache_dir=cache_dir, replica_note=note
        )

    results: list[ChunkExtraction | None] = []
    failures: list[dict] = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(job, item) for item in work]
        for (c, note), future in zip(work, futures):
            try:
                results.append(future.result())
            except (ExtractError, BackendError) as exc:
                if not best_effort:
                    raise
                results.append(None)
                failures.append({"chunk_id": c.chunk_id, "error": str(exc)})

    all_terms: list[Term] = []
    warnings: list[str] = []
    per_chunk_counts: dict[str, int] = {c.chunk_id: 0 for c in chunks}
    for extraction in results:
        if extraction is None:
            continue
        all_terms.extend(extraction.terms)
        warnings.extend(extraction.warnings)
        per_chunk_counts[extraction.chunk_id] += len(extraction.terms)

    merged = dedupe_terms(all_terms)
    coverage = []
    for c in chunks:
        count = per_chunk_counts[c.chunk_id]
        coverage.append(
            {
                "chunk_id": c.chunk_id,
                "start_line": c.start_line,
                "end_line": c.end_line,
                "kind": c.kind,
                "heading": c.heading,
                "term_count": count,
            }
        )
        if count == 0:
            warnings.append(
                f"chunk {c.chunk_id} ({c.start_line}-{c.end_line}) "
                "produced no terms"
            )
    return ExtractionOutcome(
        terms=merged, coverage=coverage, warnings=warnings, failures=failures
    )
