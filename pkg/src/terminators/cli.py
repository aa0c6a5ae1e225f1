"""Command-line surface.

Verbs mirror the pipeline phases (extract, verify, remediate, plan), plus
run/resume/report for whole-pipeline driving. Stage outputs embed the
canonical line-numbered document so later verbs can both check that the
document on disk is unchanged and keep the original numbering.

Exit codes: 0 success, 1 usage error, 2 pipeline failure, 3 backend failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .backends import Backend, BackendError, LiveBackend, load_script
from .chunking import ChunkMode, ChunkStrategy, DEFAULT_MAX_CHUNK_LINES
from .documents import (
    FORMATS,
    IngestError,
    SourceDocument,
    SpanError,
    ingest_path,
)
from .parsing import ExtractionConfig, ExtractError, extract_document
from .pipeline import (
    REPORT_AUDIT,
    REPORT_FORMATS,
    ResumeError,
    RunConfig,
    emit_report,
    json_dumps,
    load_run,
    resume as resume_run,
    run_pipeline,
)
from .planning import (
    PLAN_DISCLAIMER,
    JurisdictionId,
    PlanError,
    Scenario,
    plan_all,
    plan_to_json,
)
from .remediation import (
    DEFAULT_MAX_ATTEMPTS,
    apply_outcome,
    outcome_to_json,
    remediate,
    status_for_label,
    advance,
)
from .terms import LifecycleError, SchemaError, term_from_json, term_to_json
from .verification import (
    DEFAULT_LOW_OVERLAP_THRESHOLD,
    VerifyError,
    verification_from_json,
    verification_to_json,
    verify_all,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PIPELINE = 2
EXIT_BACKEND = 3

CACHE_ENV = "TERMINATORS_CACHE"

_STRATEGY_MODES = {
    "whole": ChunkMode.WHOLE_DOCUMENT,
    "parallel": ChunkMode.PARALLEL_MERGE,
    "section": ChunkMode.SECTION_BY_SECTION,
    "paragraph": ChunkMode.PARAGRAPH,
}

DEFAULT_LIVE_MODEL = "gpt-4o"
DEFAULT_LIVE_ENDPOINT = "https://api.openai.com/v1/chat/completions"

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this tool reserves 2 for pipeline
    failures, so usage errors exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--backend",
        metavar="SPEC",
        help="'live' or 'scripted:<script.json>'",
    )
    parser.add_argument("--model", default=DEFAULT_LIVE_MODEL,
                        help="model name for the live backend")
    parser.add_argument("--endpoint", default=DEFAULT_LIVE_ENDPOINT,
                        help="chat-completion URL for the live backend")
    parser.add_argument(
        "--cache-dir",
        metavar="DIR",
        help=f"response cache directory (default: ${CACHE_ENV} if set)",
    )
    parser.add_argument("--workers", type=int, default=4, metavar="N")
    parser.add_argument("--best-effort", action="store_true",
                        help="record per-item failures and keep going")
    parser.add_argument("--out", metavar="PATH",
                        help="output path (default: stdout; for run: runs root)")


def _add_extraction_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--aspect", action="append", dest="aspects", metavar="S",
                        help="restrict extraction to an aspect (repeatable)")
    parser.add_argument("--strategy", choices=sorted(_STRATEGY_MODES),
                        default="section")
    parser.add_argument("--max-chunk-lines", type=int,
                        default=DEFAULT_MAX_CHUNK_LINES, metavar="N")
    parser.add_argument("--parallel-fanout", type=int, default=2, metavar="N")
    parser.add_argument("--provider-name", metavar="NAME",
                        help="service provider name, for party labeling")
    parser.add_argument("--first-line", type=int, default=1, metavar="N",
                        help="number the first line N instead of 1")
    parser.add_argument("--doc-format", choices=FORMATS,
                        help="input format (default: by file extension)")


def _add_verify_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--threshold", type=float,
                        default=DEFAULT_LOW_OVERLAP_THRESHOLD, metavar="X",
                        help="lexical score below which a term is flagged")
    parser.add_argument("--context-lines", type=int, default=0, metavar="N",
                        help="extra lines shown around the cited span")


def _add_remediate_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--max-attempts", type=int,
                        default=DEFAULT_MAX_ATTEMPTS, metavar="N")
    parser.add_argument("--no-llm-resource", action="store_true",
                        help="propose replacement spans by lexical search only")


def _add_plan_flags(parser: argparse.ArgumentParser, *, required: bool) -> None:
    parser.add_argument("--scenario-file", metavar="PATH", required=required,
                        help="user scenario: JSON or plain text")
    parser.add_argument("--jurisdiction", choices=["gdpr", "ccpa"],
                        help="regional profile for the planner")
    parser.add_argument("--min-checks", type=int, default=3, metavar="N")


def build_parser() -> _Parser:
    parser = _Parser(
        prog="terminators",
        description=(
            "Parse a terms-of-service document into verified, "
            "source-anchored terms and scenario-aware accountability checks."
        ),
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("extract", help="extract terms from a document")
    p.add_argument("file")
    _add_extraction_flags(p)
    p.add_argument("--paper-format", action="store_true",
                   help="emit only the three-field term records")
    _add_common(p)

    p = sub.add_parser("verify", help="verify terms against their citations")
    p.add_argument("terms_file")
    p.add_argument("doc_file")
    _add_verify_flags(p)
    _add_common(p)

    p = sub.add_parser("remediate",
                       help="re-source or discard non-supported terms")
    p.add_argument("verified_file",
                   help="verify output (terms + verifications)")
    p.add_argument("doc_file")
    _add_remediate_flags(p)
    _add_verify_flags(p)
    _add_common(p)

    p = sub.add_parser("plan", help="plan accountability checks")
    p.add_argument("audit_file", help="remediate (or verify) output")
    _add_plan_flags(p, required=True)
    _add_common(p)

    p = sub.add_parser("run", help="full pipeline into a run directory")
    p.add_argument("file")
    _add_extraction_flags(p)
    _add_verify_flags(p)
    _add_remediate_flags(p)
    _add_plan_flags(p, required=False)
    _add_common(p)

    p = sub.add_parser("resume", help="continue an interrupted run")
    p.add_argument("run_dir")
    _add_common(p)

    p = sub.add_parser("report", help="render a stored run")
    p.add_argument("run_dir")
    p.add_argument("--report-format", choices=REPORT_FORMATS,
                   default=REPORT_AUDIT)
    _add_common(p)

    return parser


def _build_backend(args) -> Backend:
    spec = args.backend
    if not spec:
        raise BackendError(
            "config", "no backend configured; pass --backend live or "
                      "--backend scripted:<script.json>"
        )
    if spec == "live":
        return LiveBackend(args.model, args.endpoint,
                           max_concurrency=max(1, args.workers))
    if spec.startswith("scripted:"):
        path = spec[len("scripted:"):]
        if not path:
            raise BackendError("config", "scripted backend needs a script path")
        return load_script(path)
    raise BackendError("config", f"unknown backend spec {spec!r}")


def _cache_dir(args):
    return args.cache_dir or os.environ.get(CACHE_ENV) or None


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _ingest_for(args, path: str) -> SourceDocument:
    return ingest_path(
        path,
        getattr(args, "doc_format", None),
        first_line=getattr(args, "first_line", 1),
    )


def _load_stage_file(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not JSON: {exc}") from exc
    if not isinstance(data, dict) or "document" not in data:
        raise ValueError(
            f"{path}: not a stage file (missing embedded document); "
            "pass the output of an earlier verb"
        )
    return data


def _check_doc_matches(doc: SourceDocument, doc_file: str) -> None:
    on_disk = ingest_path(doc_file, first_line=doc.first_line)
    if on_disk.fingerprint != doc.fingerprint:
        raise ValueError(
            f"{doc_file} does not match the document the terms were "
            f"extracted from (fingerprint {on_disk.fingerprint[:12]} vs "
            f"{doc.fingerprint[:12]})"
        )


def _extraction_config(args) -> ExtractionConfig:
    mode = _STRATEGY_MODES[args.strategy]
    strategy = ChunkStrategy(
        mode=mode,
        max_chunk_lines=args.max_chunk_lines,
        parallel_fanout=args.parallel_fanout if mode is ChunkMode.PARALLEL_MERGE else 1,
    )
    return ExtractionConfig(
        strategy=strategy,
        aspects=tuple(args.aspects) if args.aspects else None,
        provider_name=args.provider_name,
    )


def _load_scenario(args) -> Scenario | None:
    if not args.scenario_file:
        return None
    text = Path(args.scenario_file).read_text(encoding="utf-8")
    persona = None
    jurisdiction = None
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        description = text.strip()
    else:
        if isinstance(data, dict):
            description = data.get("description", "")
            persona = data.get("persona")
            jurisdiction = data.get("jurisdiction")
        elif isinstance(data, str):
            description = data
        else:
            raise ValueError(
                f"{args.scenario_file}: scenario JSON must be an object or string"
            )
    if args.jurisdiction:
        jurisdiction = args.jurisdiction
    return Scenario(
        description=description,
        persona=persona,
        jurisdiction=JurisdictionId(jurisdiction) if jurisdiction else JurisdictionId.NONE,
    )


def _cmd_extract(args) -> int:
    doc = _ingest_for(args, args.file)
    cfg = _extraction_config(args)
    backend = _build_backend(args)
    outcome = extract_document(
        doc, cfg, backend,
        workers=args.workers,
        best_effort=args.best_effort,
        cache_dir=_cache_dir(args),
    )
    if args.paper_format:
        _emit(args, json_dumps(
            [term_to_json(t, extended=False) for t in outcome.terms]
        ))
        return EXIT_OK
    _emit(args, json_dumps({
        "document": doc.to_json(),
        "terms": [term_to_json(t) for t in outcome.terms],
        "coverage": outcome.coverage,
        "warnings": outcome.warnings,
        "failures": outcome.failures,
    }))
    return EXIT_OK


def _cmd_verify(args) -> int:
    stage = _load_stage_file(args.terms_file)
    doc = SourceDocument.from_json(stage["document"])
    _check_doc_matches(doc, args.doc_file)
    terms = [term_from_json(r) for r in stage["terms"]]
    backend = _build_backend(args)
    results = verify_all(
        terms, doc, backend,
        threshold=args.threshold,
        context_lines=args.context_lines,
        workers=args.workers,
        best_effort=args.best_effort,
        cache_dir=_cache_dir(args),
    )
    verified_terms = [
        advance(t, status_for_label(r.label)) for t, r in zip(terms, results)
    ]
    _emit(args, json_dumps({
        "document": doc.to_json(),
        "terms": [term_to_json(t) for t in verified_terms],
        "verifications": [verification_to_json(r) for r in results],
    }))
    return EXIT_OK


def _cmd_remediate(args) -> int:
    stage = _load_stage_file(args.verified_file)
    if "verifications" not in stage:
        raise ValueError(
            f"{args.verified_file}: no verifications; pass the output of "
            "'terminators verify'"
        )
    doc = SourceDocument.from_json(stage["document"])
    _check_doc_matches(doc, args.doc_file)
    terms = [term_from_json(r) for r in stage["terms"]]
    results = [verification_from_json(r) for r in stage["verifications"]]
    backend = _build_backend(args)
    outcomes = []
    finals = []
    for term, result in zip(terms, results):
        outcome = remediate(
            term, result, doc, backend,
            max_attempts=args.max_attempts,
            use_llm_resource=not args.no_llm_resource,
            threshold=args.threshold,
            context_lines=args.context_lines,
            best_effort=args.best_effort,
            cache_dir=_cache_dir(args),
        )
        outcomes.append(outcome)
        finals.append(apply_outcome(term, outcome))
    _emit(args, json_dumps({
        "document": doc.to_json(),
        "terms": [term_to_json(t) for t in finals],
        "outcomes": [outcome_to_json(o) for o in outcomes],
    }))
    return EXIT_OK


def _cmd_plan(args) -> int:
    stage = _load_stage_file(args.audit_file)
    doc = SourceDocument.from_json(stage["document"])
    terms = [term_from_json(r) for r in stage["terms"]]
    scenario = _load_scenario(args)
    backend = _build_backend(args)
    plans, notices = plan_all(
        terms, doc, scenario, backend,
        min_checks=args.min_checks,
        workers=args.workers,
        best_effort=args.best_effort,
        cache_dir=_cache_dir(args),
    )
    statements = {t.term_id: t.statement for t in terms}
    _emit(args, json_dumps({
        "disclaimer": PLAN_DISCLAIMER,
        "plans": [
            plan_to_json(p, statement=statements.get(p.term_id)) for p in plans
        ],
        "notices": notices,
    }))
    return EXIT_OK


def _run_summary(run) -> str:
    lines = [
        f"run {run.run_id} ({run.phase})",
        f"  directory: {run.store.run_dir}",
        f"  terms extracted: {len(run.terms)}",
        f"  surviving: {len(run.surviving_terms)}",
        f"  discarded: {len(run.discarded_terms)}",
        f"  plans: {len(run.plans)}",
        "  reports: report.audit.json, report.paper.json, report.md",
    ]
    return "\n".join(lines) + "\n"


def _cmd_run(args) -> int:
    doc = _ingest_for(args, args.file)
    backend = _build_backend(args)
    config = RunConfig(
        extraction=_extraction_config(args),
        threshold=args.threshold,
        context_lines=args.context_lines,
        max_attempts=args.max_attempts,
        use_llm_resource=not args.no_llm_resource,
        min_checks=args.min_checks,
        workers=args.workers,
        best_effort=args.best_effort,
        backend_id=backend.backend_id,
        scenario=_load_scenario(args),
    )
    out_root = args.out or "runs"
    run = run_pipeline(doc, config, backend, out_root,
                       cache_dir=_cache_dir(args))
    sys.stdout.write(_run_summary(run))
    return EXIT_OK


def _cmd_resume(args) -> int:
    backend = _build_backend(args)
    run = resume_run(args.run_dir, backend, cache_dir=_cache_dir(args))
    sys.stdout.write(_run_summary(run))
    return EXIT_OK


def _cmd_report(args) -> int:
    run = load_run(args.run_dir)
    _emit(args, emit_report(run, args.report_format))
    return EXIT_OK


_HANDLERS = {
    "extract": _cmd_extract,
    "verify": _cmd_verify,
    "remediate": _cmd_remediate,
    "plan": _cmd_plan,
    "run": _cmd_run,
    "resume": _cmd_resume,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.verb](args)
    except BackendError as exc:
        print(f"terminators: backend error ({exc.kind}): {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (
        IngestError,
        SpanError,
        SchemaError,
        ExtractError,
        VerifyError,
        PlanError,
        LifecycleError,
        ResumeError,
        ValueError,
        OSError,
    ) as exc:
        print(f"terminators: error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
