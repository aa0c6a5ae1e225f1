"""End-to-end pipeline orchestration and run persistence.

A run is a directory of plain JSON files, one per phase, plus an append-only
event log. Every file except the event log is deterministic for a given
document, configuration, and backend script, so runs can be diffed and
golden-tested byte for byte; timestamps exist only in events.jsonl.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .backends import Backend
from .documents import SourceDocument, fingerprint_text
from .parsing import ExtractionConfig, extract_document
from .planning import (
    PLAN_DISCLAIMER,
    AccountabilityPlan,
    Scenario,
    plan_all,
    plan_from_json,
    plan_to_json,
)
from .remediation import (
    RemediationOutcome,
    apply_outcome,
    outcome_from_json,
    outcome_to_json,
    remediate,
    status_for_label,
    advance,
)
from .terms import Term, TermStatus, term_from_json, term_to_json
from .verification import (
    VerificationResult,
    verification_from_json,
    verification_to_json,
    verify_all,
)

PHASES = ("ingested", "extracted", "verified", "remediated", "planned", "complete")

SURVIVING_STATUSES = (TermStatus.VERIFIED_SUPPORTED, TermStatus.RESOURCED)

REPORT_AUDIT = "audit_json"
REPORT_PAPER = "paper_json"
REPORT_MARKDOWN = "markdown"
REPORT_FORMATS = (REPORT_AUDIT, REPORT_PAPER, REPORT_MARKDOWN)


class ResumeError(Exception):
    """A persisted run cannot be picked back up."""

    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(message)


def json_dumps(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def _phase_index(phase: str) -> int:
    return PHASES.index(phase)


@dataclass(frozen=True)
class RunConfig:
    extraction: ExtractionConfig
    threshold: float = 0.3
    context_lines: int = 0
    max_attempts: int = 2
    use_llm_resource: bool = True
    min_checks: int = 3
    workers: int = 4
    best_effort: bool = False
    backend_id: str = "scripted"
    scenario: Scenario | None = None

    def to_json(self) -> dict:
        return {
            "extraction": self.extraction.to_json(),
            "threshold": self.threshold,
            "context_lines": self.context_lines,
            "max_attempts": self.max_attempts,
            "use_llm_resource": self.use_llm_resource,
            "min_checks": self.min_checks,
            "workers": self.workers,
            "best_effort": self.best_effort,
            "backend_id": self.backend_id,
            "scenario": self.scenario.to_json() if self.scenario else None,
        }

    @classmethod
    def from_json(cls, data: dict) -> "RunConfig":
        scenario = data.get("scenario")
        return cls(
            extraction=ExtractionConfig.from_json(data["extraction"]),
            threshold=data["threshold"],
            context_lines=data["context_lines"],
            max_attempts=data["max_attempts"],
            use_llm_resource=data["use_llm_resource"],
            min_checks=data["min_checks"],
            workers=data["workers"],
            best_effort=data["best_effort"],
            backend_id=data["backend_id"],
            scenario=Scenario.from_json(scenario) if scenario else None,
        )

    @property
    def fingerprint(self) -> str:
        payload = json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


class RunStore:
    """Plain-file persistence for one run, with atomic writes and a
    serialized event-log writer."""

    EVENTS = "events.jsonl"

    def __init__(self, run_dir):
        self.run_dir = Path(run_dir)
        self._lock = threading.Lock()

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def exists(self, name: str) -> bool:
        return self.path(name).exists()

    def write_json(self, name: str, obj) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        target = self.path(name)
        tmp = target.with_name(f".{name}.{os.getpid()}.tmp")
        tmp.write_text(json_dumps(obj), encoding="utf-8")
        os.replace(tmp, target)

    def write_text(self, name: str, text: str) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        target = self.path(name)
        tmp = target.with_name(f".{name}.{os.getpid()}.tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, target)

    def read_json(self, name: str):
        return json.loads(self.path(name).read_text(encoding="utf-8"))

    def reset_events(self) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.path(self.EVENTS).write_text("", encoding="utf-8")

    def append_event(self, phase: str, event: str) -> None:
        line = json.dumps(
            {
                "ts": datetime.now(timezone.utc).isoformat(),
                "phase": phase,
                "event": event,
            },
            ensure_ascii=False,
        )
        with self._lock:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            with open(self.path(self.EVENTS), "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


@dataclass
class AuditRun:
    run_id: str
    store: RunStore
    config: RunConfig
    doc: SourceDocument
    phase: str
    terms: list[Term] = field(default_factory=list)
    coverage: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    verifications: list[VerificationResult] = field(default_factory=list)
    outcomes: list[RemediationOutcome] = field(default_factory=list)
    plans: list[AccountabilityPlan] = field(default_factory=list)
    notices: list[str] = field(default_factory=list)

    @property
    def surviving_terms(self) -> list[Term]:
        return [t for t in self.terms if t.status in SURVIVING_STATUSES]

    @property
    def discarded_terms(self) -> list[Term]:
        return [t for t in self.terms if t.status is TermStatus.DISCARDED]


def compute_run_id(doc: SourceDocument, config: RunConfig) -> str:
    key = f"{doc.fingerprint}|{config.fingerprint}"
    return hashlib.sha256(key.encode("utf-8")).hexdigest()[:12]


def _save_run_header(run: AuditRun) -> None:
    run.store.write_json(
        "run.json",
        {
            "run_id": run.run_id,
            "phase": run.phase,
            "doc_name": run.doc.source_name,
            "doc_fingerprint": run.doc.fingerprint,
            "config": run.config.to_json(),
        },
    )


def start_run(doc: SourceDocument, config: RunConfig, out_root) -> AuditRun:
    """Create (or recreate) the run directory for this document + config.

    The run id is content-derived, so running the same inputs again rewrites
    the same directory rather than accumulating copies.
    """
    run_id = compute_run_id(doc, config)
    store = RunStore(Path(out_root) / run_id)
    run = AuditRun(
        run_id=run_id, store=store, config=config, doc=doc, phase="ingested"
    )
    store.reset_events()
    store.write_json("document.json", doc.to_json())
    _save_run_header(run)
    store.append_event("ingested", "document stored")
    return run


def _phase_extract(run: AuditRun, backend: Backend, cache_dir) -> None:
    cfg = run.config
    outcome = extract_document(
        run.doc,
        cfg.extraction,
        backend,
        workers=cfg.workers,
        best_effort=cfg.best_effort,
        cache_dir=cache_dir,
    )
    run.terms = outcome.terms
    run.coverage = outcome.coverage
    run.warnings = outcome.warnings
    run.failures = outcome.failures
    run.store.write_json(
        "terms.json",
        {
            "terms": [term_to_json(t) for t in run.terms],
            "coverage": run.coverage,
            "warnings": run.warnings,
            "failures": run.failures,
        },
    )
    run.phase = "extracted"
    _save_run_header(run)
    run.store.append_event("extracted", f"{len(run.terms)} terms")


def _phase_verify(run: AuditRun, backend: Backend, cache_dir) -> None:
    cfg = run.config
    run.verifications = verify_all(
        run.terms,
        run.doc,
        backend,
        threshold=cfg.threshold,
        context_lines=cfg.context_lines,
        workers=cfg.workers,
        best_effort=cfg.best_effort,
        cache_dir=cache_dir,
    )
    run.terms = [
        advance(term, status_for_label(result.label))
        for term, result in zip(run.terms, run.verifications)
    ]
    run.store.write_json(
        "verifications.json",
        {
            "verifications": [verification_to_json(v) for v in run.verifications],
            "terms": [term_to_json(t) for t in run.terms],
        },
    )
    run.phase = "verified"
    _save_run_header(run)
    supported = sum(1 for v in run.verifications if v.label == "Supported")
    run.store.append_event(
        "verified", f"{supported}/{len(run.verifications)} supported"
    )


def _phase_remediate(run: AuditRun, backend: Backend, cache_dir) -> None:
    cfg = run.config

    def job(pair):
        term, result = pair
        outcome = remediate(
            term,
            result,
            run.doc,
            backend,
            max_attempts=cfg.max_attempts,
            use_llm_resource=cfg.use_llm_resource,
            threshold=cfg.threshold,
            context_lines=cfg.context_lines,
            best_effort=cfg.best_effort,
            cache_dir=cache_dir,
        )
        return outcome, apply_outcome(term, outcome)

    pairs = list(zip(run.terms, run.verifications))
    outcomes: list[RemediationOutcome] = []
    finals: list[Term] = []
    if pairs:
        with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
            futures = [pool.submit(job, pair) for pair in pairs]
            for future in futures:
                outcome, final = future.result()
                outcomes.append(outcome)
                finals.append(final)
    run.outcomes = outcomes
    run.terms = finals
    run.store.write_json(
        "remediation.json",
        {
            "outcomes": [outcome_to_json(o) for o in run.outcomes],
            "terms": [term_to_json(t) for t in run.terms],
        },
    )
    run.phase = "remediated"
    _save_run_header(run)
    discarded = sum(1 for o in outcomes if o.action == "discarded")
    run.store.append_event("remediated", f"{discarded} discarded")


def _phase_plan(run: AuditRun, backend: Backend, cache_dir) -> None:
    cfg = run.config
    if cfg.scenario is None:
        run.plans = []
        run.notices = ["no scenario provided; planning skipped"]
    else:
        run.plans, run.notices = plan_all(
            run.terms,
            run.doc,
            cfg.scenario,
            backend,
            min_checks=cfg.min_checks,
            workers=cfg.workers,
            best_effort=cfg.best_effort,
            cache_dir=cache_dir,
        )
    statements = {t.term_id: t.statement for t in run.terms}
    run.store.write_json(
        "plans.json",
        {
            "disclaimer": PLAN_DISCLAIMER,
            "plans": [
                plan_to_json(p, statement=statements.get(p.term_id))
                for p in run.plans
            ],
            "notices": run.notices,
        },
    )
    run.phase = "planned"
    _save_run_header(run)
    run.store.append_event("planned", f"{len(run.plans)} plans")


def _phase_report(run: AuditRun) -> None:
    run.store.write_text("report.audit.json", emit_report(run, REPORT_AUDIT))
    run.store.write_text("report.paper.json", emit_report(run, REPORT_PAPER))
    run.store.write_text("report.md", emit_report(run, REPORT_MARKDOWN))
    run.phase = "complete"
    _save_run_header(run)
    run.store.append_event("complete", "reports written")


def _execute(run: AuditRun, backend: Backend, cache_dir=None) -> AuditRun:
    if run.phase == "ingested":
        _phase_extract(run, backend, cache_dir)
    if run.phase == "extracted":
        _phase_verify(run, backend, cache_dir)
    if run.phase == "verified":
        _phase_remediate(run, backend, cache_dir)
    if run.phase == "remediated":
        _phase_plan(run, backend, cache_dir)
    if run.phase == "planned":
        _phase_report(run)
    return run


def run_pipeline(
    doc: SourceDocument,
    config: RunConfig,
    backend: Backend,
    out_root,
    *,
    cache_dir=None,
) -> AuditRun:
    """Execute every phase over an ingested document, persisting as it goes.
    A phase failure leaves the run directory resumable at the last completed
    phase."""
    run = start_run(doc, config, out_root)
    return _execute(run, backend, cache_dir)


def load_run(run_dir) -> AuditRun:
    """Rehydrate a persisted run, restoring the newest stored term states."""
    store = RunStore(run_dir)
    if not store.exists("run.json"):
        raise ResumeError("missing_run", f"no run.json under {store.run_dir}")
    header = store.read_json("run.json")
    config = RunConfig.from_json(header["config"])
    doc = SourceDocument.from_json(store.read_json("document.json"))
    if fingerprint_text(doc.text()) != doc.fingerprint:
        raise ResumeError(
            "document_changed",
            f"stored document under {store.run_dir} no longer matches its "
            "fingerprint",
        )
    if header["doc_fingerprint"] != doc.fingerprint:
        raise ResumeError(
            "document_changed",
            "run header fingerprint does not match the stored document",
        )
    run = AuditRun(
        run_id=header["run_id"],
        store=store,
        config=config,
        doc=doc,
        phase=header["phase"],
    )
    provider = config.extraction.provider_name
    idx = _phase_index(run.phase)
    if idx >= _phase_index("extracted"):
        data = store.read_json("terms.json")
        run.terms = [
            term_from_json(r, provider_name=provider) for r in data["terms"]
        ]
        run.coverage = data["coverage"]
        run.warnings = data["warnings"]
        run.failures = data["failures"]
    if idx >= _phase_index("verified"):
        data = store.read_json("verifications.json")
        run.verifications = [
            verification_from_json(r) for r in data["verifications"]
        ]
        run.terms = [
            term_from_json(r, provider_name=provider) for r in data["terms"]
        ]
    if idx >= _phase_index("remediated"):
        data = store.read_json("remediation.json")
        run.outcomes = [outcome_from_json(r) for r in data["outcomes"]]
        run.terms = [
            term_from_json(r, provider_name=provider) for r in data["terms"]
        ]
    if idx >= _phase_index("planned"):
        data = store.read_json("plans.json")
        run.plans = [plan_from_json(r) for r in data["plans"]]
        run.notices = data["notices"]
    return run


def resume(run_dir, backend: Backend, *, cache_dir=None) -> AuditRun:
    """Continue a persisted run from its first incomplete phase. Completed
    runs come back unchanged."""
    run = load_run(run_dir)
    if run.phase == "complete":
        return run
    run.store.append_event(run.phase, "resumed")
    return _execute(run, backend, cache_dir)


def _verification_by_term(run: AuditRun) -> dict[str, VerificationResult]:
    return {v.term_id: v for v in run.verifications}


def _final_label(run: AuditRun, term: Term) -> str | None:
    """The verification label backing the term's current source."""
    if term.status is TermStatus.RESOURCED:
        for outcome in run.outcomes:
            if outcome.term_id == term.term_id:
                for entry in reversed(outcome.trail):
                    if entry.verification is not None:
                        return entry.verification.label
    result = _verification_by_term(run).get(term.term_id)
    return result.label if result else None


def emit_report(run: AuditRun, format: str) -> str:
    """Render a persisted run. audit_json is the full lifecycle record,
    paper_json is the compact three-field array of surviving terms, and
    markdown is a human summary."""
    if format not in REPORT_FORMATS:
        raise ValueError(f"unknown report format {format!r}")
    if _phase_index(run.phase) < _phase_index("extracted"):
        raise ValueError("run has no extracted terms to report yet")

    surviving = run.surviving_terms
    discarded = run.discarded_terms

    if format == REPORT_PAPER:
        return json_dumps([term_to_json(t, extended=False) for t in surviving])

    if format == REPORT_AUDIT:
        statements = {t.term_id: t.statement for t in run.terms}
        return json_dumps(
            {
                "run_id": run.run_id,
                "document": {
                    "source_name": run.doc.source_name,
                    "fingerprint": run.doc.fingerprint,
                    "first_line": run.doc.first_line,
                    "last_line": run.doc.last_line,
                },
                "config": run.config.to_json(),
                "counts": {
                    "extracted": len(run.terms),
                    "surviving": len(surviving),
                    "discarded": len(discarded),
                },
                "terms": [term_to_json(t) for t in run.terms],
                "verifications": [
                    verification_to_json(v) for v in run.verifications
                ],
                "remediation": [outcome_to_json(o) for o in run.outcomes],
                "plans": [
                    plan_to_json(p, statement=statements.get(p.term_id))
                    for p in run.plans
                ],
                "coverage": run.coverage,
                "warnings": run.warnings,
                "failures": run.failures,
                "notices": run.notices,
                "disclaimer": PLAN_DISCLAIMER,
            }
        )

    checks_by_term = {p.term_id: len(p.checks) for p in run.plans}

    def cell(text: str) -> str:
        return text.replace("|", "\\|")

    lines = [
        f"# Accountability audit: {run.doc.source_name}",
        "",
        f"Run `{run.run_id}` over `{run.doc.source_name}` "
        f"(fingerprint `{run.doc.fingerprint[:12]}`). "
        f"{len(run.terms)} terms extracted, {len(surviving)} surviving, "
        f"{len(discarded)} discarded.",
        "",
        "## Surviving terms",
        "",
        "| Term | Status | Label | Checks |",
        "| --- | --- | --- | --- |",
    ]
    for term in surviving:
        lines.append(
            f"| {cell(term.statement)} | {term.status.value} "
            f"| {_final_label(run, term) or ''} "
            f"| {checks_by_term.get(term.term_id, 0)} |"
        )
    lines.extend(["", "## Discarded terms", ""])
    if discarded:
        lines.extend(["| Term | Label | Attempts |", "| --- | --- | --- |"])
        attempts_by_term = {o.term_id: o.attempts for o in run.outcomes}
        labels = _verification_by_term(run)
        for term in discarded:
            label = labels[term.term_id].label if term.term_id in labels else ""
            lines.append(
                f"| {cell(term.statement)} | {label} "
                f"| {attempts_by_term.get(term.term_id, 0)} |"
            )
    else:
        lines.append("None.")
    lines.extend(["", f"> {PLAN_DISCLAIMER}", ""])
    return "\n".join(lines)
