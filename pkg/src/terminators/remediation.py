"""The retry loop for terms whose citations did not hold up.

Any term not labeled Supported gets up to max_attempts chances at a better
source span, proposed either by a parser-role backend call over the full
document or by a deterministic lexical search. A proposal that verifies
Supported re-sources the term; running out of proposals discards it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .backends import Backend, BackendError
from .documents import SourceDocument, SourceRef, SpanError, render_numbered, resolve_span
from .parsing import run_request
from .prompts import build_resource_request
from .terms import (
    LifecycleError,
    SchemaError,
    Term,
    TermStatus,
    canonical_source_string,
    parse_source_string,
)
from .verification import (
    DEFAULT_LOW_OVERLAP_THRESHOLD,
    LABEL_SUPPORTED,
    VerificationResult,
    VerifyError,
    lexical_support_score,
    verification_from_json,
    verification_to_json,
    verify_term,
)

DEFAULT_MAX_ATTEMPTS = 2
DEFAULT_MAX_SPAN_LINES = 6

ACTION_KEPT = "kept_supported"
ACTION_RESOURCED = "resourced"
ACTION_DISCARDED = "discarded"

TRANSITIONS: dict[TermStatus, frozenset[TermStatus]] = {
    TermStatus.EXTRACTED: frozenset(
        {
            TermStatus.VERIFIED_SUPPORTED,
            TermStatus.CONTRADICTED,
            TermStatus.UNVERIFIABLE,
        }
    ),
    TermStatus.VERIFIED_SUPPORTED: frozenset(),
    TermStatus.CONTRADICTED: frozenset({TermStatus.RESOURCED, TermStatus.DISCARDED}),
    TermStatus.UNVERIFIABLE: frozenset({TermStatus.RESOURCED, TermStatus.DISCARDED}),
    TermStatus.RESOURCED: frozenset(),
    TermStatus.DISCARDED: frozenset(),
}


def advance(term: Term, new_status: TermStatus) -> Term:
    """Move a term along the lifecycle, or refuse."""
    if new_status not in TRANSITIONS[term.status]:
        raise LifecycleError(
            f"term {term.term_id}: illegal transition "
            f"{term.status.value} -> {new_status.value}"
        )
    return replace(term, status=new_status)


def status_for_label(label: str) -> TermStatus:
    return {
        "Supported": TermStatus.VERIFIED_SUPPORTED,
        "Contradicted": TermStatus.CONTRADICTED,
        "Unverifiable": TermStatus.UNVERIFIABLE,
    }[label]


@dataclass(frozen=True)
class TrailEntry:
    attempt: int
    proposed: SourceRef | None
    verification: VerificationResult | None
    note: str


@dataclass
class RemediationOutcome:
    term_id: str
    action: str
    old_source: SourceRef
    new_source: SourceRef | None
    attempts: int
    trail: tuple[TrailEntry, ...]


def find_best_window(
    statement: str,
    doc: SourceDocument,
    *,
    max_span_lines: int = DEFAULT_MAX_SPAN_LINES,
) -> SourceRef:
    """Contiguous window of at most max_span_lines lines with the highest
    lexical support for the statement. Ties go to the earliest start, then
    the shortest span (guaranteed by scan order plus strict improvement)."""
    best_ref = None
    best_score = -1.0
    for start in range(doc.first_line, doc.last_line + 1):
        for end in range(start, min(start + max_span_lines, doc.last_line + 1)):
            ref = SourceRef(doc.source_name, start, end)
            score = lexical_support_score(statement, resolve_span(doc, ref))
            if score > best_score:
                best_score = score
                best_ref = ref
    return best_ref


def resource_term(
    term: Term,
    doc: SourceDocument,
    backend: Backend | None,
    *,
    use_llm: bool = True,
    max_span_lines: int = DEFAULT_MAX_SPAN_LINES,
    cache_dir=None,
) -> SourceRef | None:
    """Propose a replacement source span for the statement, or nothing.

    The backend path shows the full numbered document and asks for a single
    term record whose source is the best span; a proposal that does not
    parse, does not resolve, or is not exactly one record counts as absent.
    """
    if not use_llm:
        return find_best_window(term.statement, doc, max_span_lines=max_span_lines)

    req = build_resource_request(
        doc.source_name, render_numbered(doc), term.statement
    )
    resp = run_request(backend, req, cache_dir)
    records = resp.parsed
    if len(records) != 1:
        return None
    record = records[0]
    source = record.get("source")
    if not isinstance(source, str):
        return None
    try:
        ref = parse_source_string(source.strip())
        resolve_span(doc, ref)
    except (SchemaError, SpanError):
        return None
    return ref


def remediate(
    term: Term,
    result: VerificationResult,
    doc: SourceDocument,
    backend: Backend | None,
    *,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    use_llm_resource: bool = True,
    threshold: float = DEFAULT_LOW_OVERLAP_THRESHOLD,
    context_lines: int = 0,
    best_effort: bool = False,
    cache_dir=None,
) -> RemediationOutcome:
    """Decide one term's fate given its verification.

    Supported terms pass through untouched. Anything else loops: propose a
    span, stop if there is none or it repeats an earlier one, verify it,
    accept on Supported. The full trail of proposals and verdicts is kept.
    """
    if result.term_id != term.term_id:
        raise ValueError(
            f"verification {result.term_id} does not belong to term {term.term_id}"
        )
    if result.label == LABEL_SUPPORTED:
        return RemediationOutcome(
            term_id=term.term_id,
            action=ACTION_KEPT,
            old_source=term.source,
            new_source=None,
            attempts=0,
            trail=(),
        )

    def span_key(ref: SourceRef) -> tuple:
        return (ref.source_name, ref.start_line, ref.end_line)

    tried = {span_key(term.source)}
    trail: list[TrailEntry] = []
    attempts = 0
    for attempt in range(1, max_attempts + 1):
        attempts = attempt
        try:
            proposed = resource_term(
                term,
                doc,
                backend,
                use_llm=use_llm_resource,
                cache_dir=cache_dir,
            )
        except BackendError as exc:
            if not best_effort:
                raise
            trail.append(TrailEntry(attempt, None, None, f"re-sourcing failed: {exc}"))
            break
        if proposed is None:
            trail.append(TrailEntry(attempt, None, None, "no span proposed"))
            break
        if span_key(proposed) in tried:
            trail.append(
                TrailEntry(attempt, proposed, None, "proposed an already tried span")
            )
            break
        tried.add(span_key(proposed))
        candidate = replace(term, source=proposed)
        try:
            verdict = verify_term(
                candidate,
                doc,
                backend,
                threshold=threshold,
                context_lines=context_lines,
                cache_dir=cache_dir,
            )
        except (VerifyError, BackendError) as exc:
            if not best_effort:
                raise
            trail.append(
                TrailEntry(attempt, proposed, None, f"verification failed: {exc}")
            )
            break
        trail.append(TrailEntry(attempt, proposed, verdict, ""))
        if verdict.label == LABEL_SUPPORTED:
            return RemediationOutcome(
                term_id=term.term_id,
                action=ACTION_RESOURCED,
                old_source=term.source,
                new_source=proposed,
                attempts=attempts,
                trail=tuple(trail),
            )

    return RemediationOutcome(
        term_id=term.term_id,
        action=ACTION_DISCARDED,
        old_source=term.source,
        new_source=None,
        attempts=attempts,
        trail=tuple(trail),
    )


def outcome_to_json(outcome: RemediationOutcome) -> dict:
    return {
        "term_id": outcome.term_id,
        "action": outcome.action,
        "old_source": canonical_source_string(outcome.old_source),
        "new_source": (
            canonical_source_string(outcome.new_source)
            if outcome.new_source
            else None
        ),
        "attempts": outcome.attempts,
        "trail": [
            {
                "attempt": entry.attempt,
                "proposed": (
                    canonical_source_string(entry.proposed)
                    if entry.proposed
                    else None
                ),
                "verification": (
                    verification_to_json(entry.verification)
                    if entry.verification
                    else None
                ),
                "note": entry.note,
            }
            for entry in outcome.trail
        ],
    }


def outcome_from_json(record: dict) -> RemediationOutcome:
    trail = tuple(
        TrailEntry(
            attempt=entry["attempt"],
            proposed=(
                parse_source_string(entry["proposed"]) if entry["proposed"] else None
            ),
            verification=(
                verification_from_json(entry["verification"])
                if entry["verification"]
                else None
            ),
            note=entry["note"],
        )
        for entry in record["trail"]
    )
    return RemediationOutcome(
        term_id=record["term_id"],
        action=record["action"],
        old_source=parse_source_string(record["old_source"]),
        new_source=(
            parse_source_string(record["new_source"])
            if record["new_source"]
            else None
        ),
        attempts=record["attempts"],
        trail=trail,
    )


def apply_outcome(term: Term, outcome: RemediationOutcome) -> Term:
    """Produce the term's post-remediation record. Takes the term as it
    stands after verification (status already one of the verified states)."""
    if outcome.term_id != term.term_id:
        raise ValueError(
            f"outcome {outcome.term_id} does not belong to term {term.term_id}"
        )
    if outcome.action == ACTION_KEPT:
        if term.status is not TermStatus.VERIFIED_SUPPORTED:
            raise LifecycleError(
                f"term {term.term_id}: kept_supported requires "
                f"verified_supported, found {term.status.value}"
            )
        return term
    if outcome.action == ACTION_RESOURCED:
        return advance(
            replace(term, source=outcome.new_source), TermStatus.RESOURCED
        )
    if outcome.action == ACTION_DISCARDED:
        return advance(term, TermStatus.DISCARDED)
    raise ValueError(f"unknown action {outcome.action!r}")
